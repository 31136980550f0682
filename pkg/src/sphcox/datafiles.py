"""CSV tables with JSON sidecars, written through temporary files."""

from contextlib import contextmanager
import csv
import json
import logging
import os

import numpy

from .util import ConfigError, create_temp_file, sidecar_path


logger = logging.getLogger(__name__)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, numpy.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, numpy.generic):
        return value.item()
    if hasattr(value, "as_dict"):
        return _jsonable(value.as_dict())
    return value


def write_metadata(path, metadata):
    with open(path, "w") as outp:
        json.dump(_jsonable(metadata), outp, indent=2, sort_keys=True)
        outp.write("\n")


def read_metadata(path):
    json_path = path if path.endswith(".json") else sidecar_path(path)
    if not os.path.exists(json_path):
        return {}
    with open(json_path) as inp:
        return json.load(inp)


def _format(value):
    if isinstance(value, (float, numpy.floating)):
        return repr(float(value))
    return str(value)


def write_table(path, header, rows):
    with open(path, "w", newline="") as outp:
        writer = csv.writer(outp)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format(v) for v in row])


def read_table(path, expected_header=None):
    """Returns (header, float array with one row per record)."""
    if not os.path.exists(path):
        raise ConfigError(f"no such file: {path}")
    with open(path, newline="") as inp:
        reader = csv.reader(inp)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path} is empty")
        if expected_header and header[: len(expected_header)] != list(expected_header):
            raise ConfigError(
                f"{path} has columns {header}, expected {list(expected_header)}"
            )
        try:
            rows = [[float(v) for v in row] for row in reader if row]
        except ValueError as e:
            raise ConfigError(f"{path}: {e}")
    data = numpy.array(rows, dtype=float).reshape(-1, len(header))
    return header, data


class OutputSet:
    """Collects outputs under temporary names and renames them on commit.

    Nothing is visible under the final names until every output has been
    written. discard() removes whatever was staged.
    """

    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.staged = []
        os.makedirs(out_dir, exist_ok=True)

    def path(self, name):
        final = os.path.join(self.out_dir, name)
        temp = create_temp_file(final)
        self.staged.append((temp, final))
        return temp

    def table(self, name, header, rows, metadata=None):
        write_table(self.path(name), header, rows)
        if metadata is not None:
            write_metadata(self.path(os.path.basename(sidecar_path(name))), metadata)
        return os.path.join(self.out_dir, name)

    def json(self, name, data):
        write_metadata(self.path(name), data)
        return os.path.join(self.out_dir, name)

    def commit(self):
        for temp, final in self.staged:
            os.replace(temp, final)
            print("wrote", final)
        self.staged = []

    def discard(self):
        for temp, final in self.staged:
            try:
                os.remove(temp)
            except FileNotFoundError:
                pass
        self.staged = []


@contextmanager
def staged_outputs(out_dir):
    outputs = OutputSet(out_dir)
    try:
        yield outputs
    except BaseException:
        logger.info("discarding %d partial outputs", len(outputs.staged))
        outputs.discard()
        raise
    outputs.commit()
