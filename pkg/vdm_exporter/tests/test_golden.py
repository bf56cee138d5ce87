"""Byte-level golden check: the checked-in FTRV must be reproduced exactly.

The golden was produced by the same recipe ``_export_golden`` runs: dc-base
mock export, one feature channel, fixed conditioning gradient, seed 7. The
mock's arithmetic avoids libm, so the bytes are platform-independent; any
drift in the FTRV writer, the metadata layout, or the mock's draw order
shows up here first.
"""

from pathlib import Path

import numpy as np
from meshmotion import read_ftrv

from vdm_exporter import ExportJob, MockDenoiser, export_features

GOLDEN = Path(__file__).parent / "golden" / "dc_mock_seed7.ftrv"


def _export_golden(tmp_path) -> Path:
    cond = tmp_path / "cond.npy"
    np.save(cond, np.linspace(0.0, 1.0, 36 * 64).reshape(36, 64))
    job = ExportJob(
        image=str(cond),
        prompt="golden reference clip",
        model_id="dc-base",
        out_path=str(tmp_path / "golden.ftrv"),
    )
    return export_features(
        job, denoiser=MockDenoiser(job.spec, feature_dim=1), seed=7
    )


def test_golden_bytes_reproduced(tmp_path):
    out = _export_golden(tmp_path)
    assert out.read_bytes() == GOLDEN.read_bytes()


def test_golden_loads_in_primary_reader():
    fv = read_ftrv(GOLDEN)
    assert fv.data.shape == (16, 72, 128, 1)
    assert fv.reference == 0
    assert np.isfinite(fv.data).all()
