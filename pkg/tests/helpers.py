"""Builders for hand-made patients used across the test modules."""

from datetime import date, timedelta

from sfi_lab.cohort import NON_DEMENTIA, OTHER_SPECIALTY, OUTPATIENT, CodeRegistry, Encounter, PatientRecord

REGISTRY = CodeRegistry.default()
START = date(2021, 1, 1)


def enc(code, setting=OUTPATIENT, specialty=OTHER_SPECIALTY, medication=None, day=0, fidelity=None):
    """Encounter whose fidelity class is looked up in the default registry."""
    fidelity = fidelity or REGISTRY.entries.get(code, NON_DEMENTIA)
    return Encounter(START + timedelta(days=day), code, fidelity, setting, specialty, medication)


def patient(*encounters, pid="T1", age=70, race="White", label=True):
    return PatientRecord(pid, age, race, label, tuple(encounters))


def seq(*codes, **kw):
    """Patient with one encounter per code on consecutive days."""
    return patient(*(enc(c, day=i, **kw) for i, c in enumerate(codes)))
