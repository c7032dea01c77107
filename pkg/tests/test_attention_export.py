import numpy as np

from renov import rnvt
from renov.attention import AttentionBlockInput, aggregated_attention, export_attention_weights


def test_attention_export_files(tmp_path):
    rng = np.random.default_rng(0)
    inp = AttentionBlockInput(
        rng.normal(size=(4, 3)),
        (rng.normal(size=(4, 3)), rng.normal(size=(4, 2))),
        ((rng.normal(size=(5, 3)), rng.normal(size=(5, 2))),),
    )
    _, weights = aggregated_attention(inp, return_weights=True)
    export_attention_weights(tmp_path, weights)
    back = rnvt.read_tensor(tmp_path / "attention.rnvt")
    np.testing.assert_array_equal(back, weights)
    blob = (tmp_path / "attention.pgm").read_bytes()
    assert blob.startswith(b"P5\n9 4\n255\n")
