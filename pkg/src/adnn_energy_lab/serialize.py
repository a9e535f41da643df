"""JSON wire formats for arrays and fitted models.

Arrays travel as {"shape": [...], "data": [flat row-major values]}. Floats
rely on repr round-tripping, so a dump/load cycle is lossless.
"""

import json

import numpy as np


class DataFormatError(ValueError):
    """Malformed serialized payload."""


def array_to_json(arr):
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def array_from_json(obj, name="array"):
    if not isinstance(obj, dict) or "shape" not in obj or "data" not in obj:
        raise DataFormatError("%s must be an object with 'shape' and 'data'" % name)
    shape = tuple(int(s) for s in obj["shape"])
    data = np.asarray(obj["data"], dtype=np.float64)
    expected = int(np.prod(shape)) if shape else 1
    if data.size != expected:
        raise DataFormatError(
            "%s carries %d values but shape %s needs %d"
            % (name, data.size, list(shape), expected)
        )
    if data.size and not np.isfinite(data).all():
        raise DataFormatError("%s contains non-finite values" % name)
    return data.reshape(shape)


def dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_json(path, name="file"):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as err:
        raise DataFormatError("%s is not valid JSON: %s" % (name, err)) from None
