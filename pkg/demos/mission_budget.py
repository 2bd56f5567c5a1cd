"""Scenario budgets for a 4512 px camera at 550 km, and how three devices fare.

    python3 demos/mission_budget.py
"""

from cubesat_ipu import planner

camera = planner.CameraModel(gsd_m_per_px=14.8495, image_height_px=4512, image_width_px=4512, overlap_fraction=0.5)
orbit = planner.orbit_from_altitude(550_000.0)

print(f"orbital velocity {orbit.orbital_velocity_m_s:.1f} m/s, period {orbit.orbital_period_s:.0f} s")
print(f"inter-image period {planner.inter_image_period(camera, orbit):.2f} s")
print(f"images per Greenland pass {planner.images_per_pass_quotient(2_670_000.0, camera):.2f}")

devices = [
    planner.DeviceMeasurement("fast-accelerator", 4.118, 1500, 3000, 64 * 10**9),
    planner.DeviceMeasurement("embedded-cpu", 40.0, 900, 1200, 32 * 10**9),
    planner.DeviceMeasurement("desktop-gpu", 0.5, 12000, 20000, 256 * 10**9),
]
for scenario in planner.Scenario:
    budget = planner.scenario_budget(scenario, camera, orbit)
    print(f"\n{scenario.value}: {budget.per_image_latency_s:.2f} s per image, "
          f"{budget.buffered_images} images, {budget.storage_required_bytes / 1e6:,.0f} MB")
    for d in devices:
        v = planner.evaluate_device(d, budget)
        print(f"  {d.device_name:<17} {'PASS' if v.passed else 'fail'}  duty {v.duty_cycle:6.3f}  "
              f"nominal {v.nominal_power_mw:8.1f} mW  energy {v.energy_mwh:7.2f} mWh")
