import numpy as np
import pytest

from smallarea.schema import (
    ConstraintTable,
    Schema,
    SurveyDataset,
    SurveyRecord,
    VariableDef,
)


def make_schema(**kwargs):
    defaults = dict(
        constraint_vars=(
            VariableDef("sex", ("M", "F")),
            VariableDef("age", ("Y", "O")),
        ),
        income_field="income",
        deprivation_fields=(),
        household_field="household_id",
    )
    defaults.update(kwargs)
    return Schema(**defaults)


def make_survey(schema, cats_per_record, incomes=None, deprivations=None):
    """cats_per_record: list of dicts variable -> category."""
    records = []
    for i, cats in enumerate(cats_per_record):
        records.append(
            SurveyRecord(
                record_id=f"r{i}",
                household_id=f"h{i}",
                categories=dict(cats),
                income=None if incomes is None else incomes[i],
                deprivations=() if deprivations is None else tuple(deprivations[i]),
            )
        )
    return SurveyDataset(records, schema)


def make_table(variable, zones, categories, counts):
    return ConstraintTable(variable, tuple(zones), tuple(categories), np.array(counts))


@pytest.fixture
def two_by_two():
    """Classic 2-constraint instance: records (M,Y),(M,O),(F,Y),(F,O)."""
    schema = make_schema()
    survey = make_survey(
        schema,
        [
            {"sex": "M", "age": "Y"},
            {"sex": "M", "age": "O"},
            {"sex": "F", "age": "Y"},
            {"sex": "F", "age": "O"},
        ],
    )
    return schema, survey
