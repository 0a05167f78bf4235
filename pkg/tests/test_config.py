import pytest

from rafm import config
from rafm.config import ConfigError

BASE = """
[dataset]
kind = student_t
n_samples = 50000
d = 16

[experiment]
methods = gaussian_fm, source_only, rafm
"""


def test_defaults_match_protocol():
    cfg = config.parse(BASE)
    assert cfg.seeds == (8925, 77395, 65457)
    assert (cfg.train_steps, cfg.batch, cfg.lr, cfg.checkpoint_every) == (10_000, 256, 1e-3, 5_000)
    assert (cfg.sampler_steps, cfg.n_gen, cfg.n_proj) == (128, 10_000, 500)
    ds = cfg.dataset
    assert (ds.matrix_seed, ds.split_seed, ds.nu, ds.label) == (42, 0, 3.0, "student_t_d16")
    assert [v.label for v in cfg.methods] == ["gaussian_fm", "source_only", "rafm"]


def test_render_roundtrip_is_fixed_point():
    cfg = config.parse(BASE)
    text = cfg.render()
    again = config.parse(text)
    assert again == cfg
    assert again.render() == text


@pytest.mark.parametrize("extra", [
    "[train]\nsteps = 10\nwarmup = 3\n",
    "[extras]\nx = 1\n",
    "[eval]\nangular = maybe\n",
    "[sampler]\nsteps = 0\n",
])
def test_bad_configs_rejected(extra):
    with pytest.raises(ConfigError):
        config.parse(BASE + extra)


@pytest.mark.parametrize("text", [
    BASE.replace("d = 16", "d = 16\nkappa = 3"),
    BASE.replace("kind = student_t", "kind = mnist"),
    BASE.replace("n_samples = 50000\n", ""),
    BASE.replace("gaussian_fm, ", "msgm, "),
    BASE.replace("rafm\n", "rafm, rafm\n"),
    BASE + "seeds = 1, 1\n",
    "[experiment]\nmethods = rafm\n",
])
def test_bad_dataset_or_methods(text):
    with pytest.raises(ConfigError):
        config.parse(text)


def test_piv_rejects_oracle_and_labels():
    piv = """
[dataset]
kind = piv
source = data/piv/piv_8x4.bin
grid_ny = 8
grid_nx = 4
trunc = 16

[experiment]
methods = rafm
"""
    cfg = config.parse(piv)
    assert cfg.dataset.label == "piv_d16"
    assert cfg.dataset.dim == 16
    with pytest.raises(ConfigError):
        config.parse(piv.replace("methods = rafm", "methods = rafm_oracle"))


def test_variants():
    v = config.Variant.parse("rafm_noproj")
    assert (v.spec.method, v.spec.radial_mode, v.spec.project) == ("rafm", "empirical", False)
    assert config.Variant.parse("source_only_oracle").spec.radial_mode == "oracle"


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    paths = sorted(root.glob("*.cfg")) + sorted((root / "smoke").glob("*.cfg"))
    assert len(paths) >= 10
    for p in paths:
        cfg = config.load(p)
        assert config.parse(cfg.render()) == cfg
    main = config.load(root / "student_t_d16.cfg")
    assert (main.batch, main.train_steps, main.sampler_steps, main.n_gen, main.n_proj) == \
        (256, 10_000, 128, 10_000, 500)
    assert main.seeds == (8925, 77395, 65457)
    assert (main.dataset.n_samples, main.dataset.matrix_seed, main.dataset.split_seed) == \
        (50_000, 42, 0)
