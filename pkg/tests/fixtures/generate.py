"""Regenerate the recorded regression values in reference_runs.json.

Run from the repository root: ``python3 tests/fixtures/generate.py``.
"""

import json
from pathlib import Path

import numpy as np

from contrast_lab.core import LossSpec, TemperatureConfig, Variant
from contrast_lab.datagen import AugmentConfig, stream, synthetic_dataset
from contrast_lab.trainer import TrainConfig, evaluate, init_encoder, train_run

HERE = Path(__file__).parent
SEEDS = (0, 1, 2, 3, 4)
AUG = AugmentConfig(noise_sigma=0.1, dropout_prob=0.0, seed=0)


def reference_data(seed=0, spread=0.1):
    return synthetic_dataset(10, 200, 32, spread, seed)


def directional_specs():
    temp = TemperatureConfig(tau0=0.1, alpha=0.5, A0=0.0)
    return {
        "INFONCE": LossSpec(Variant.INFONCE, temp),
        "NTXENT_INBATCH": LossSpec(Variant.NTXENT_INBATCH, temp),
        "DCL": LossSpec(Variant.DCL, temp),
        "MACL": LossSpec(Variant.MACL, temp, adaptive=True, reweight=True),
    }


def untrained_knn(spread):
    out = []
    for s in SEEDS:
        data = reference_data(s, spread)
        params = init_encoder(data.d, 16, None, stream(s, "init"))
        out.append(evaluate(params, data, 200, None, s).knn_accuracy)
    return out


def directional_experiment():
    data = reference_data()
    knn = {}
    for name, spec in directional_specs().items():
        knn[name] = [train_run(data, AUG, TrainConfig(spec=spec, batch_size=16, epochs=30, seed=s)).knn_accuracy[-1]
                     for s in SEEDS]
    gap = float(np.mean(knn["MACL"]) - np.mean(knn["INFONCE"]))
    return {"knn": knn, "macl_minus_infonce": gap}


def main():
    data = reference_data()
    infonce = train_run(data, AUG, TrainConfig(spec=directional_specs()["INFONCE"], batch_size=64, epochs=30, seed=0))
    macl = train_run(data, AUG, TrainConfig(spec=directional_specs()["MACL"], batch_size=64, epochs=30, seed=0))
    fixtures = {
        "untrained_knn_spread_1.0": untrained_knn(1.0),
        "untrained_knn_spread_0.1": untrained_knn(0.1),
        "reference_infonce_n64": {k: getattr(infonce, k) for k in ("loss", "alignment_loss", "knn_accuracy")},
        "reference_macl_n64": {k: getattr(macl, k) for k in ("A_batch", "tau_used", "clamp_count")},
        "directional": directional_experiment(),
    }
    (HERE / "reference_runs.json").write_text(json.dumps(fixtures, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
