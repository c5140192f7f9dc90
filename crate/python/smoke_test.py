"""Smoke test for the compiled `stirap` extension."""

import math

import stirap


def main():
    names = [n for n, _ in stirap.list_scenarios()]
    assert "fig5_coherence" in names, names

    pump = stirap.PulseEnvelope.ramped_sin(20.0, 0.1)
    stokes = stirap.PulseEnvelope.ramped_cos(20.0, 0.1)
    pulses = stirap.PulseSet(pump, stokes)
    traj = stirap.propagate(pulses, (1, 0, 0), (-4.0, 4.0), grid_points=400)
    p = traj.final_populations()
    assert abs(sum(p) - 1.0) < 1e-8, p
    assert traj.norm_drift < 1e-8

    grid = stirap.uniform_grid(-4.0, 4.0, 400)
    angles = stirap.angle_hierarchy(pulses, grid, 1)
    dressed = stirap.project(traj, angles, 2)
    assert dressed.basis_order == 2

    p_formula = stirap.second_order_transfer_populations(math.pi * math.sqrt(15))
    assert abs(p_formula[2] - 1.0) < 1e-12

    grid = stirap.uniform_grid(-8.0, 8.0, 2000)
    design = stirap.second_order_transfer_pulses(2 * math.pi, grid)
    traj = stirap.propagate(design.pulses, (1, 0, 0), (-8.0, 8.0))
    p_formula = stirap.second_order_transfer_populations(2 * math.pi)
    for a, b in zip(traj.final_populations(), p_formula):
        assert abs(a - b) < 1e-4, (a, b)

    report = stirap.run_scenario("fig5_coherence")
    assert report.passed, report.summary()

    rows = stirap.sweep([1.0, math.sqrt(15)], "second")
    assert all(abs(f - n) < 1e-4 for _, f, n in rows), rows

    try:
        stirap.run_scenario("no_such_scenario")
    except ValueError:
        pass
    else:
        raise AssertionError("expected a ValueError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
