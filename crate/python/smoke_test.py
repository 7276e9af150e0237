"""Smoke test for the mspgd extension module.

Build and install first:
    pip install maturin
    pip install --no-build-isolation -e crates/python
"""

import math

import mspgd


def main():
    assert "d_r0_5p4" in mspgd.presets()

    # Zernike round trip
    assert mspgd.noll_to_nm(2) == (1, 1)
    coeffs = [0.0, 0.3, -0.2, 0.5, 0.1, 0.0, -0.4]
    phase = mspgd.zernike_synthesize(coeffs, 64)
    fit = mspgd.zernike_fit(phase, len(coeffs), 64)
    assert max(abs(a - b) for a, b in zip(fit, coeffs)) < 1e-9

    # flat-wavefront coupling ceiling
    w, eta = mspgd.optimal_mode_radius(0.4, 2.0, 1570e-9)
    assert abs(eta - 0.81) < 0.01, eta
    assert w > 0

    # wavelength scaling of r0
    assert abs(mspgd.scale_r0(0.074, 810e-9, 1570e-9) - 0.164) < 5e-4

    screen = mspgd.phase_screen(0.1, 64, 0.01, 3)
    assert len(screen) == 64 * 64 and all(math.isfinite(p) for p in screen)
    assert screen == mspgd.phase_screen(0.1, 64, 0.01, 3)

    assert abs(mspgd.improvement_db([0.1, 0.1], [0.2, 0.2]) - 10 * math.log10(2)) < 1e-12
    assert abs(mspgd.rsd([1.0, 3.0]) - 70.71067811865476) < 1e-9

    try:
        mspgd.Scenario.preset("nope")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown preset accepted")

    s = mspgd.Scenario.preset("d_r0_5p4")
    s.duration = 1.0
    result = s.simulate()
    assert result["mean_eta_closed"] > result["mean_eta_open"], result
    print(
        f"simulate {s.name}: {result['median_improvement_db']:.2f} dB, "
        f"RSD {result['rsd_open']:.1f}% -> {result['rsd_closed']:.1f}%"
    )

    race = mspgd.Scenario.preset("race_identity").race()
    print(f"race_identity: {race['verdict']} ({race['wins']}/{race['losses']}/{race['ties']})")
    print("smoke test passed")


if __name__ == "__main__":
    main()
