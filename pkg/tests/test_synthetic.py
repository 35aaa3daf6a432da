import dataclasses
import filecmp
import json

import numpy as np
import pytest

from nodefdm import atmosphere as atm, data, evaluation, performance as perf, synthetic
from nodefdm.baseline import Guidance

CFG = perf.PerformanceConfig()


@pytest.fixture(scope="module")
def script():
    return synthetic.FlightScript(seed=3, wind_par=(2.0, 20.0), wind_perp=(1.0, -8.0),
                                  isa_offset=5.0, step_climbs=((300e3, 11200.0),))


@pytest.fixture(scope="module")
def scripted(script):
    return synthetic.generate_flight(CFG, script, tag="scripted")


class TestGenerateFlight:
    def test_starts_and_ends_near_500m(self, scripted):
        assert scripted["alt"][0] == pytest.approx(500.0)
        assert scripted["alt"][-1] > 500.0 - 60.0
        assert scripted["alt"].max() > 10500.0

    def test_zero_wind_ground_speed(self, script):
        calm = dataclasses.replace(script, wind_par=(0.0, 0.0), wind_perp=(0.0, 0.0))
        f = synthetic.generate_flight(CFG, calm)
        np.testing.assert_array_equal(f["gs"], f["tas"])

    def test_fuel_and_mass(self, scripted):
        assert np.all(scripted["fuel_flow"] >= 0.0)
        assert np.all(np.diff(scripted["mass"]) < 0.0)

    def test_mass_decrement_is_fuel_flow_times_dt(self, scripted):
        np.testing.assert_allclose(-np.diff(scripted["mass"]),
                                   scripted["fuel_flow"][:-1] * data.DT, rtol=1e-12, atol=1e-9)

    def test_kinematic_identities(self, scripted):
        f = scripted
        np.testing.assert_allclose(f["vs"], f["tas"] * np.sin(f["fpa"]), atol=1e-9)
        np.testing.assert_allclose(f["mach"], f["tas"] / atm.speed_of_sound(f["oat"]),
                                   atol=1e-9)
        np.testing.assert_allclose(f["gs"], f["tas"] - f["wind_par"], atol=1e-9)
        np.testing.assert_allclose(np.diff(f["alt"]), data.DT * f["vs"][:-1], atol=1e-9)
        np.testing.assert_allclose(np.diff(f["dist"]), data.DT * f["gs"][:-1], atol=1e-9)
        np.testing.assert_allclose(f["pitch"], f["aoa"] + f["fpa"], atol=1e-12)

    def test_cas_consistent(self, scripted):
        f = scripted
        np.testing.assert_allclose(f["cas"], atm.tas_to_cas(f["tas"], f["alt"], f["oat"]),
                                   rtol=1e-12)

    def test_level_cruise(self, script):
        f = synthetic.generate_flight(CFG, dataclasses.replace(script, noise=False))
        level = (np.array(f.meta["phase"]) == "LEVEL") & (f["alt"] > 9000.0)
        # steady once level has held for 15 records (capture transient over)
        run = np.zeros(len(f), dtype=int)
        for k in np.flatnonzero(level):
            run[k] = run[k - 1] + 1 if k else 1
        steady = run > 15
        assert steady.sum() > 50
        assert np.max(np.abs(f["vs"][steady])) < 0.5
        assert np.max(np.abs(f["fpa"][steady])) < 0.003

    def test_selected_vs_zero_without_mode(self, scripted):
        assert np.all(scripted["sel_vs"] == 0.0)

    def test_selected_vs_emitted(self, script):
        f = synthetic.generate_flight(CFG, dataclasses.replace(script, vs_descent=-5.0))
        assert set(np.unique(f["sel_vs"])) == {0.0, -5.0}

    def test_idle_descent_energy_non_increasing(self):
        script = synthetic.FlightScript(seed=1, noise=False)
        f = synthetic.generate_flight(CFG, script)
        routines = np.array(f.meta["routines"])
        phase = np.array(f.meta["phase"])
        energy = atm.G0 * f["alt"] + 0.5 * f["tas"] ** 2
        idle = np.flatnonzero((phase == "DESCENT") & (routines == "constantSpeedRating_time"))
        assert len(idle) > 20
        idle = idle[idle + 1 < len(f)]
        assert np.all(energy[idle + 1] - energy[idle] <= 1e-9)

    def test_phase_labels_match_generator(self, flights):
        for f in flights:
            labels = evaluation.label_phases(f)
            truth = np.array([p.lower() for p in f.meta["phase"]], dtype=object)
            assert np.mean(labels == truth) >= 0.98, f.tag

    def test_fuel_multiplier(self):
        script = synthetic.FlightScript(seed=5, noise=False)
        ref = synthetic.generate_flight(CFG, script, fuel_multiplier=1.0)
        aged = synthetic.generate_flight(CFG, script, fuel_multiplier=1.05)
        ratio = evaluation.fuel_burn(aged) / evaluation.fuel_burn(ref)
        assert ratio == pytest.approx(1.05, abs=0.01)

    def test_same_seed_same_flight(self, script):
        a = synthetic.generate_flight(CFG, script)
        b = synthetic.generate_flight(CFG, script)
        for c in data.CSV_COLUMNS:
            np.testing.assert_array_equal(a[c], b[c])

    @pytest.mark.parametrize("change, match", [
        ({"cruise_level": 13000.0}, "ceiling"),
        ({"cruise_mach": 0.9}, "Mach"),
        ({"flap_cas": (90.0, 100.0, 92.0, 86.0)}, "flap"),
        ({"descent_levels": (900.0, 3000.0)}, "descent levels"),
    ])
    def test_infeasible_script(self, script, change, match):
        with pytest.raises(synthetic.GenerationError, match=match):
            synthetic.generate_flight(CFG, dataclasses.replace(script, **change))


class TestGenerateDataset:
    def test_layout(self, small_dataset):
        manifest = data.read_manifest(small_dataset)
        root = small_dataset.parent
        files = sorted(p.name for p in (root / "flights").glob("*.csv"))
        assert len(files) == 14
        counts = {s: len(manifest["splits"][s]) for s in data.SPLITS}
        assert counts == {"train": 10, "val": 2, "test": 2}
        tags = [e["tag"] for s in data.SPLITS for e in manifest["splits"][s]]
        assert len(set(tags)) == 14
        frames = {s: {e["airframe"] for e in manifest["splits"][s]} for s in data.SPLITS}
        assert not (frames["train"] & frames["val"] or frames["train"] & frames["test"]
                    or frames["val"] & frames["test"])
        assert perf.PerformanceConfig.load(root / "performance_config.json") == CFG

    def test_byte_identical(self, small_dataset, tmp_path):
        again = synthetic.generate_dataset(tmp_path, {"train": 10, "val": 2, "test": 2}, seed=7)
        root = small_dataset.parent
        for name in ["manifest.json", "airframes.json", "performance_config.json"] + [
                f"flights/{e['file'].split('/')[-1]}"
                for s in data.SPLITS for e in json.loads(again.read_text())["splits"][s]]:
            assert filecmp.cmp(root / name, again.parent / name, shallow=False), name

    def test_empty_training_split(self, tmp_path):
        with pytest.raises(ValueError, match="empty training split"):
            synthetic.generate_dataset(tmp_path, {"train": 0, "val": 1, "test": 1})

    def test_airframe_variants(self):
        frames = synthetic.make_airframes(np.random.default_rng(0), "train", 5)
        assert {f.drag_scale for f in frames} == {0.97, 1.03}
        assert all(1.0 <= f.fuel_multiplier <= 1.06 for f in frames)
