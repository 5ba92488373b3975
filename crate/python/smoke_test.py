"""Smoke test for the pvdeblur_py extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/pvdeblur_py-*.whl
"""

import math
import os
import tempfile

import pvdeblur_py as pv


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL: {what}")
    print(f"ok: {what}")


def main():
    spec = pv.SceneSpec(seed=3, width=64, height=64, frames=6, substeps=3,
                        velocity_x=2.0, velocity_y=1.0, noise_sigma=0.02)
    seq = pv.render_sequence(spec)
    sharp, blurred, flows = seq["sharp"], seq["blurred"], seq["flows"]
    check(len(sharp) == 6 and len(flows) == 5, "render_sequence shapes")
    check(pv.SceneSpec.parse(spec.to_config()).to_config() == spec.to_config(), "scene config round-trip")

    flow = pv.estimate_flow(sharp[1], sharp[0])
    check(pv.endpoint_error(flow, flows[0], interior=0.8) < 0.25, "TV-L1 recovers translation")

    warped, mask = pv.backward_warp(sharp[0], flow)
    volume = pv.build_pixel_volume(sharp[0], flow, k=5)
    check(volume.k == 5 and len(volume.candidates(10, 10)) == 25, "pixel volume layout")
    check(pv.center_slice(volume) == warped, "center slice equals backward warp")

    majority, flags = pv.majority_warp(volume)
    stats = pv.pv_statistics(volume, sharp[1])
    check(stats["majority_fraction"] > 0.9 and len(flags) == 64 * 64, "majority statistics")
    ideal = pv.ideal_warp(volume, sharp[1])
    check(pv.psnr(ideal, sharp[1]) >= pv.psnr(pv.center_slice(volume), sharp[1]), "ideal dominates center slice")

    zero = pv.Frame.filled(16, 16, 1, 0.0)
    ten = pv.Frame.filled(16, 16, 1, 10.0 / 255.0)
    check(abs(pv.psnr(zero, ten) - 20 * math.log10(25.5)) < 1e-3, "psnr closed form")
    texture = pv.gen_texture(1, 48, 48, 1.5)
    check(abs(pv.ssim(texture, texture) - 1.0) < 1e-9, "ssim identity")
    score, dx, dy = pv.aligned_metric(texture, texture.translate(3, -2), radius=5)
    check((dx, dy) == (3, -2) and score >= 99.0, "aligned psnr recovers shift")

    est = pv.deblur_sequence(blurred, k=5)
    before = pv.evaluate_sequence(blurred, sharp, radius=5)
    after = pv.evaluate_sequence(est, sharp, radius=5)
    check(after[-1]["aligned_psnr"] > before[-1]["aligned_psnr"], "aggregate deblurring improves the last frame")

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "f.flo")
        flows[0].save(path)
        check(pv.FlowField.load(path) == flows[0], ".flo round-trip")
        path = os.path.join(tmp, "f.png")
        sharp[0].save(path)
        check(pv.Frame.load(path) == sharp[0], "PNG round-trip of an 8-bit frame")
        path = os.path.join(tmp, "v.pvol")
        volume.save(path)
        check(pv.PixelVolume.load(path).slice(1, -1) == volume.slice(1, -1), ".pvol round-trip")

    try:
        pv.build_pixel_volume(sharp[0], flow, k=4)
    except ValueError:
        print("ok: even k rejected")
    else:
        raise SystemExit("FAIL: even k accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
