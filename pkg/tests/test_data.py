import json

import numpy as np
import pytest

from signgt.data import (
    export_run,
    generate_csbm,
    load_graph_dataset,
    load_node_dataset,
    read_attention_tsv,
    read_graph_dir,
    write_graph_dataset,
    write_node_dataset,
)
from signgt.errors import FormatError, InvalidParameterError, InvalidSplitError
from signgt.graph import homophily
from signgt.training import RunHistory


def write(d, **files):
    d.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (d / f"{name}.txt").write_text(text)
    return d


class TestNodeLoader:
    def test_toy(self, fixtures):
        g = read_graph_dir(fixtures / "toy")
        assert g.n == 3
        assert g.edges.tolist() == [[0, 1], [1, 2]]
        assert g.labels.tolist() == [0, 1, 0]
        assert g.features.shape[0] == 3

    def test_homophily_fixtures(self, fixtures):
        assert homophily(read_graph_dir(fixtures / "triangle")) == 1 / 3
        assert homophily(read_graph_dir(fixtures / "same_label")) == 1.0

    def test_tiny_class_rejected_by_split(self, fixtures):
        with pytest.raises(InvalidSplitError):
            load_node_dataset(fixtures / "toy")

    def test_missing_file(self, tmp_path):
        write(tmp_path, edges="0 1\n", features="1\n2\n")
        with pytest.raises(FileNotFoundError):
            load_node_dataset(tmp_path)

    @pytest.mark.parametrize(
        "files",
        [
            dict(edges="0 1\n", features="1 2\n3\n", labels="0\n1\n"),
            dict(edges="0 5\n", features="1\n2\n", labels="0\n1\n"),
            dict(edges="0 x\n", features="1\n2\n", labels="0\n1\n"),
            dict(edges="0 1\n", features="1\n2\n", labels="0\n"),
            dict(edges="0 1\n", features="1\n2\n", labels="0\n-1\n"),
            dict(edges="0 1\n", features="1\nabc\n", labels="0\n1\n"),
            dict(edges="0 1 2\n", features="1\n2\n", labels="0\n1\n"),
        ],
    )
    def test_format_errors(self, tmp_path, files):
        with pytest.raises(FormatError):
            load_node_dataset(write(tmp_path, **files))

    def test_duplicate_edges(self, tmp_path):
        d = write(tmp_path, edges="0 1\n1 0\n0 1\n1 2\n", features="1\n2\n3\n", labels="0\n0\n0\n")
        assert read_graph_dir(d).n_edges == 2

    def test_edge_beyond_n(self, tmp_path):
        d = write(tmp_path, edges="5 1\n", features="1\n2\n3\n", labels="0\n0\n0\n")
        with pytest.raises(FormatError):
            read_graph_dir(d)

    def test_num_classes_range(self, tmp_path):
        d = write(tmp_path, edges="0 1\n", features="1\n2\n3\n4\n5\n6\n", labels="0\n0\n0\n3\n3\n3\n")
        with pytest.raises(FormatError):
            load_node_dataset(d, num_classes=2)

    def test_round_trip(self, tmp_path):
        ds = generate_csbm(60, 3, 0.1, 0.02, 5, 1.0, seed=4)
        write_node_dataset(ds, tmp_path / "d")
        back = load_node_dataset(tmp_path / "d", seed=ds.split.seed)
        assert np.array_equal(back.graph.features, ds.graph.features)
        assert np.array_equal(back.graph.edges, ds.graph.edges)
        assert np.array_equal(back.graph.labels, ds.graph.labels)
        assert back.split == ds.split


class TestGraphLoader:
    def test_graphs4(self, fixtures):
        ds = load_graph_dataset(fixtures / "graphs4", seed=0)
        assert len(ds) == 4
        assert ds.labels.tolist() == [0, 1, 0, 1]
        assert all(g.n == 2 and g.n_edges == 1 for g in ds.graphs)
        parts = np.concatenate([ds.split.train, ds.split.val, ds.split.test])
        assert sorted(parts.tolist()) == [0, 1, 2, 3]

    def test_label_count_mismatch(self, tmp_path):
        write(tmp_path / "a", edges="", features="1\n")
        (tmp_path / "graph_labels.txt").write_text("0\n1\n")
        with pytest.raises(FormatError):
            load_graph_dataset(tmp_path)

    def test_three_labels_four_graphs(self, tmp_path, fixtures):
        import shutil

        shutil.copytree(fixtures / "graphs4", tmp_path / "g")
        (tmp_path / "g" / "graph_labels.txt").write_text("0\n1\n0\n")
        with pytest.raises(FormatError):
            load_graph_dataset(tmp_path / "g")

    def test_empty_subdir(self, tmp_path):
        (tmp_path / "a").mkdir()
        (tmp_path / "graph_labels.txt").write_text("0\n")
        with pytest.raises(FormatError):
            load_graph_dataset(tmp_path)

    def test_round_trip(self, tmp_path, fixtures):
        ds = load_graph_dataset(fixtures / "graphs4")
        write_graph_dataset(ds, tmp_path / "out")
        back = load_graph_dataset(tmp_path / "out")
        assert back.labels.tolist() == ds.labels.tolist()
        for a, b in zip(ds.graphs, back.graphs):
            assert np.array_equal(a.features, b.features) and np.array_equal(a.edges, b.edges)


class TestCSBM:
    @pytest.mark.parametrize("p_in,p_out,lo,hi", [(0.002, 0.02, 0.05, 0.15), (0.02, 0.002, 0.85, 0.95)])
    def test_homophily_range(self, p_in, p_out, lo, hi):
        for seed in range(5):
            ds = generate_csbm(1000, 2, p_in, p_out, 4, 0.5, seed=seed)
            assert lo <= homophily(ds.graph) <= hi

    def test_deterministic(self):
        a = generate_csbm(80, 2, 0.1, 0.05, 3, 1.0, seed=7)
        b = generate_csbm(80, 2, 0.1, 0.05, 3, 1.0, seed=7)
        assert np.array_equal(a.graph.edges, b.graph.edges)
        assert np.array_equal(a.graph.features, b.graph.features)
        assert a.split == b.split
        c = generate_csbm(80, 2, 0.1, 0.05, 3, 1.0, seed=8)
        assert not np.array_equal(a.graph.features, c.graph.features)

    def test_monotone_in_ratio(self):
        sweep = [(0.002, 0.02), (0.005, 0.015), (0.01, 0.01), (0.015, 0.005), (0.02, 0.002)]
        means = [
            np.mean([homophily(generate_csbm(400, 2, pi, po, 2, 0.0, seed=s).graph) for s in range(5)])
            for pi, po in sweep
        ]
        assert all(a <= b for a, b in zip(means, means[1:]))

    def test_no_inter_class_edges(self):
        assert homophily(generate_csbm(200, 2, 0.05, 0.0, 2, 1.0, seed=3).graph) == 1.0

    def test_balanced(self):
        ds = generate_csbm(101, 3, 0.1, 0.1, 2, 0.0)
        assert sorted(np.bincount(ds.graph.labels).tolist()) == [33, 34, 34]

    @pytest.mark.parametrize(
        "kw", [dict(p_in=1.5), dict(p_out=-0.1), dict(n=5), dict(feat_dim=0)]
    )
    def test_invalid(self, kw):
        args = dict(n=50, num_classes=2, p_in=0.1, p_out=0.1, feat_dim=2, feat_signal=1.0)
        args.update(kw)
        with pytest.raises(InvalidParameterError):
            generate_csbm(**args)


class TestExport:
    def history(self):
        h = RunHistory()
        for e, (l, a) in enumerate([(0.7, 0.5), (0.6, 0.75)]):
            h.train_loss.append(l)
            h.train_acc.append(a)
            h.val_acc.append(a)
            h.test_acc.append(a)
            h.epoch_seconds.append(0.01)
        h.best_epoch = 1
        return h

    def test_files_and_schema(self, tmp_path):
        att = np.array([[0.5, -0.25, 0.25, 0.0, 0.0], [0.1, 0.2, -0.5, 0.1, 0.1]])
        reps = np.arange(10.0).reshape(5, 2)
        export_run(self.history(), {0: att}, reps, tmp_path / "run")
        metrics = json.loads((tmp_path / "run" / "metrics.json").read_text())
        assert len(metrics) == 2
        assert {"epoch", "train_loss", "val_acc", "test_acc"} <= set(metrics[0])
        lines = (tmp_path / "run" / "attention_node_0.tsv").read_text().splitlines()
        assert lines[0] == "head\ttarget_node_id\tattention_value"
        assert len(lines) == 1 + 2 * 5
        assert np.array_equal(read_attention_tsv(tmp_path / "run" / "attention_node_0.tsv"), att)
        rep = (tmp_path / "run" / "representations.tsv").read_text().splitlines()
        assert rep[0] == "node_id\tdim_0\tdim_1" and len(rep) == 6

    def test_unwritable(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            export_run(self.history(), {}, None, blocker / "sub")
