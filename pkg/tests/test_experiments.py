import numpy as np
import pytest

from straintomo.deformation import PhantomSpec
from straintomo.diffraction import PrecessionConfig
from straintomo.experiments import (CentreSetup, high_energy_centre_study, layered_column,
                                    phantom_combos)


def test_phantom_combos_cover_all_settings():
    combos = phantom_combos()
    assert len(combos) == 18
    assert len(set(combos)) == 18


def test_unstrained_column_has_zero_error():
    setup = CentreSetup(npix=256)
    fld, col = layered_column(setup, PhantomSpec(1, 1, 0.0, 0))
    errs = setup.errors(col, setup.truth(fld), PrecessionConfig.degrees(1.0, 8))
    for e in errs.values():
        assert np.max(e) < 1e-9


@pytest.mark.slow
def test_high_energy_centre_of_mass_error():
    # unprecessed flat-Ewald patterns: centre-of-mass error about 0.03 %
    res = high_energy_centre_study(30)
    print("high-energy mean error: CoM %.4f, registered %.4f"
          % (res["com"].mean(), res["registered"].mean()))
    assert res["com"].mean() <= 0.06
