"""Quick check that the compiled extension imports and behaves."""

import math
import os
import statistics
import tempfile

import sonotrace as st


def main():
    c = st.precondition_coeffs(0.25)
    assert abs(c[0] - 0.5) < 1e-12, c

    steps = st.sigma_steps(10)
    assert len(steps) == 11 and steps[0] == 160.0 and steps[-1] == 0.0
    assert abs(steps[9] - 0.002) < 1e-15

    # Deterministic sampler on a Gaussian oracle lands near the analytic endpoint.
    x = st.sample_gaussian([0.0] * 8, 0.25, 160, seed=1)
    assert max(abs(v) for v in x) < 2.0

    draws = st.sample_gmm([0.5, 0.5], [-1.0, 1.0], 0.05, 400, seed=2)
    pos = [v for v in draws if v > 0]
    assert 0.4 < len(pos) / len(draws) < 0.6
    assert abs(statistics.mean(pos) - 1.0) < 0.03

    assert abs(st.frechet_distance([0.0], [[1.0]], [1.0], [[1.0]]) - 1.0) < 1e-12
    assert abs(st.psnr_from_rmse(5.8489) - 32.8234) < 0.05

    clip = st.synth_clip([1, 4, 2], speaker_id=0, master_seed=7, seed=3, resolution=16)
    assert (clip.frames, clip.height, clip.width) == (12, 16, 16)
    assert len(st.extract_features(clip)) == 64
    assert st.rmse(clip, clip) == 0.0

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "c.utiv")
        st.write_clip(clip, path)
        back = st.read_clip(path)
        assert back.pixels == clip.pixels
        with open(path, "rb") as f:
            data = f.read()
        assert st.Clip.from_bytes(data).to_bytes() == data
        try:
            st.Clip.from_bytes(data[:-1])
        except ValueError as e:
            assert "byte" in str(e)
        else:
            raise AssertionError("truncated clip accepted")

    audio = st.encode_audio([1, 1, 2], speaker_id=0, master_seed=7, clip_seed=9, dim=8)
    text = st.encode_text([1, 2], dim=8)
    assert len(audio) == 3 and len(audio[0]) == 8 and len(text) == 2
    assert st.derive_seed(1, "a") != st.derive_seed(1, "b")
    assert math.isfinite(st.churn_gamma(1.0, 40, 40.0))
    print("python smoke test ok")


if __name__ == "__main__":
    main()
