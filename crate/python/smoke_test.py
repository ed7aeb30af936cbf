"""Smoke test for the exphormer_xc extension module.

Build and install first:
    pip install --no-build-isolation ./crates/python
"""

import math

import exphormer_xc as exc


def main():
    h2 = exc.Geometry.h2(1.0)
    assert h2.n_atoms == 2
    assert math.isclose(h2.nuclear_repulsion(), 1 / 1.4)

    grid = exc.grid_summary(h2)
    assert grid["n_points"] == len(grid["points"]) > 0

    spec = exc.expander_spectrum(400, 6, seed=1)
    assert spec["pass"], spec

    plain = exc.scf(h2, xc="pw92")
    assert plain["converged"]
    model = exc.Model("exphormer-full", seed=3)
    assert model.beta == 0.0
    learned = exc.scf(h2, xc="exphormer-pw92", model=model, seed=3)
    diff = abs(plain["energies"]["total"] - learned["energies"]["total"])
    assert diff < 1e-10, diff

    again = exc.Model.load(model.save())
    assert again.n_parameters == model.n_parameters

    fci = exc.fci(h2)
    assert fci["energies"][0] < plain["energies"]["total"]

    record, trained = exc.train_model(
        '{"model": {"variant": "nn-lda", "channels": 4, "layers": 1},'
        ' "train_s": [1.0, 3.1], "val_s": [2.0], "max_epochs": 2}'
    )
    assert len(record["epochs"]) == 2
    curve = exc.dissociation_curve([1.0], model=trained,
                                   config='{"model": {"variant": "nn-lda", "channels": 4, "layers": 1}}')
    assert [p["method"] for p in curve] == ["fci", "pw92", "nn-lda-pw92"]
    print("ok: E(H2, pw92) = %.8f Ha, E(FCI) = %.8f Ha" % (plain["energies"]["total"], fci["energies"][0]))


if __name__ == "__main__":
    main()
