import json

import numpy as np
import pytest

from latent_transport.core import Domain, TimeGrid, canonical_grid
from latent_transport.io import (
    ValidationError,
    load_fit,
    load_truth,
    metadata_line,
    read_covariates,
    read_dataset,
    save_fit,
    save_truth,
    write_dataset,
)
from latent_transport.ltm import LTMConfig, MultivariateSample, fit_ltm
from latent_transport.simgen import SimConfig, simulate_dataset
from latent_transport.smooth import RawObservations


@pytest.fixture(scope="module")
def small_fit():
    raw, truth = simulate_dataset(SimConfig(n=6, p=2, m=21, sigma_w=0.5, sigma_d=0.5, sigma_e=1.0, seed=2))
    return fit_ltm(MultivariateSample.from_raw(raw, subject_ids=list("abcdef"), component_ids=["NOx", "O3"]),
                   LTMConfig(), seed=5), truth


def write(path, text):
    path.write_text(text)
    return path


def test_fit_roundtrip_bit_exact(small_fit, tmp_path):
    fit, _ = small_fit
    save_fit(fit, tmp_path / "f.jsonl", Domain(0.0, 24.0))
    back, dom = load_fit(tmp_path / "f.jsonl")
    assert dom == Domain(0.0, 24.0)
    assert np.array_equal(back.latent.values, fit.latent.values)
    assert np.array_equal(back.grid.points, fit.grid.points)
    assert np.array_equal(back.amplitudes, fit.amplitudes)
    assert np.array_equal(back.transport_thetas, fit.transport_thetas)
    assert np.array_equal(back.representatives, fit.representatives)
    for a, b in zip(back.subject_warps, fit.subject_warps):
        assert np.array_equal(a.values, b.values) and np.array_equal(a.grid.points, b.grid.points)
    for a, b in zip(back.component_transports, fit.component_transports):
        assert np.array_equal(a.values, b.values)
    for a, b in zip(back.tempos, fit.tempos):
        assert np.array_equal(a.values, b.values)
    for i in range(fit.n):
        for j in range(fit.p):
            assert np.array_equal(back.distortions[i][j].values, fit.distortions[i][j].values)
    assert back.config == fit.config
    assert (back.eta1, back.eta1_latent, back.eta2, back.latent_scale) == \
        (fit.eta1, fit.eta1_latent, fit.eta2, fit.latent_scale)
    assert back.diagnostics == json.loads(json.dumps(fit.diagnostics))
    assert back.subject_ids == tuple("abcdef") and back.component_ids == ("NOx", "O3")
    # saving the loaded fit reproduces the file byte for byte
    save_fit(back, tmp_path / "g.jsonl", dom)
    assert (tmp_path / "f.jsonl").read_bytes() == (tmp_path / "g.jsonl").read_bytes()


def test_truth_roundtrip(small_fit, tmp_path):
    _, truth = small_fit
    save_truth(truth, tmp_path / "t.jsonl")
    back = load_truth(tmp_path / "t.jsonl")
    g = canonical_grid(51)
    assert np.array_equal(back.curves(g), truth.curves(g))
    assert back.config == truth.config


def test_archive_kind_and_version(small_fit, tmp_path):
    fit, truth = small_fit
    save_truth(truth, tmp_path / "t.jsonl")
    with pytest.raises(ValidationError, match="not a ltm-fit archive"):
        load_fit(tmp_path / "t.jsonl")
    save_fit(fit, tmp_path / "f.jsonl")
    lines = (tmp_path / "f.jsonl").read_text().splitlines()
    head = json.loads(lines[0])
    head["archive_version"] = 99
    lines[0] = json.dumps(head)
    (tmp_path / "f.jsonl").write_text("\n".join(lines))
    with pytest.raises(ValidationError, match="version"):
        load_fit(tmp_path / "f.jsonl")


def test_dataset_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    raw = RawObservations(TimeGrid.uniform(7), rng.uniform(1, 2, size=(3, 2, 7)))
    write_dataset(tmp_path / "d.csv", raw, Domain(6.0, 18.0), ["s1", "s2", "s3"], ["a", "b"],
                  header=metadata_line("test", 0))
    back, dom, sids, cids = read_dataset(tmp_path / "d.csv")
    assert np.array_equal(back.y, raw.y)
    assert dom == Domain(6.0, 18.0)
    assert sids == ["s1", "s2", "s3"] and cids == ["a", "b"]


def test_metadata_line():
    line = metadata_line("fit", 3, knots=4)
    assert line.startswith("# latent_transport version=") and "seed=3" in line and line.endswith("\n")


HEADER = "subject_id,component_id,t,y\n"


def rows(n=2, p=2, m=4, skip=None, tmap=None):
    out = []
    for i in range(n):
        for j in range(p):
            for s in range(m):
                if skip == (i, j):
                    continue
                t = s / (m - 1) if tmap is None else tmap(i, j, s)
                out.append(f"{i},{j},{t!r},{1 + s}\n")
    return out


def test_dataset_errors(tmp_path):
    with pytest.raises(ValidationError, match="expected columns"):
        read_dataset(write(tmp_path / "a.csv", "id,comp,t,y\n1,1,0,1\n"))
    with pytest.raises(ValidationError, match="line 3: cannot parse"):
        read_dataset(write(tmp_path / "b.csv", HEADER + "1,1,0,1\n1,1,0.5,abc\n"))
    with pytest.raises(ValidationError, match="line 2: expected 4 fields"):
        read_dataset(write(tmp_path / "c.csv", HEADER + "1,1,0\n"))
    with pytest.raises(ValidationError, match="finite"):
        read_dataset(write(tmp_path / "d.csv", HEADER + "1,1,0,nan\n"))
    with pytest.raises(ValidationError, match="no rows for component"):
        read_dataset(write(tmp_path / "e.csv", HEADER + "".join(rows(skip=(1, 1)))))
    ragged = rows(tmap=lambda i, j, s: s / 3 if (i, j) != (1, 0) else s / 4)
    with pytest.raises(ValidationError, match="ragged"):
        read_dataset(write(tmp_path / "f.csv", HEADER + "".join(ragged)))
    uneven = rows(tmap=lambda i, j, s: [0.0, 0.1, 0.5, 1.0][s])
    with pytest.raises(ValidationError, match="equispaced"):
        read_dataset(write(tmp_path / "g.csv", HEADER + "".join(uneven)))
    with pytest.raises(ValidationError, match="at least 3"):
        read_dataset(write(tmp_path / "h.csv", HEADER + "".join(rows(m=2))))
    with pytest.raises(ValidationError, match="no data rows"):
        read_dataset(write(tmp_path / "i.csv", "# only a comment\n"))


def test_covariates(tmp_path):
    p = write(tmp_path / "x.csv", "# c\nsubject_id,x\nb,2.0\na,1.5\n")
    assert np.array_equal(read_covariates(p, ["a", "b"]), [1.5, 2.0])
    with pytest.raises(ValidationError, match="no covariate for subjects c, d"):
        read_covariates(p, ["a", "b", "c", "d"])
    with pytest.raises(ValidationError, match="line 2: cannot parse"):
        read_covariates(write(tmp_path / "y.csv", "subject_id,x\na,fast\n"), ["a"])
    with pytest.raises(ValidationError, match="subject_id,x"):
        read_covariates(write(tmp_path / "z.csv", "id,x\na,1\n"), ["a"])
