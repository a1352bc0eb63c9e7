"""Reading and writing run artifacts.

Numbers are written with ``%.17g`` so that every double survives a round trip,
and every artifact gets a ``<name>.meta.json`` sidecar. Nothing time dependent
is written, so rerunning a command reproduces its files byte for byte.
"""

import logging
import os
from typing import List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel

from .errors import ConfigurationError, MissingArtifactError
from .schemas import Sidecar

NUMBER_FORMAT = "%.17g"


class ArtifactStore:
    """Artifacts of one command inside an output directory.

    :attr out_dir: Output directory, created on first write.
    :attr config_hash: Hash echoed into every sidecar.
    :attr command: Subcommand echoed into every sidecar.
    """

    def __init__(self, out_dir: str, config_hash: str, command: str, tool_version: str):

        self.out_dir = out_dir
        self.config_hash = config_hash
        self.command = command
        self.tool_version = tool_version

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def prepare(self, name: str) -> str:
        """Create the parent directory of an artifact and return its path."""

        filepath = self.path(name)
        try:
            os.makedirs(os.path.dirname(filepath), exist_ok=True)
        except OSError as err:
            raise ConfigurationError(f"Cannot create output directory for `{filepath}`: {err}") from err
        return filepath

    def _write(self, filepath: str, text: str):

        try:
            with open(filepath, "w", newline="\n") as file:
                file.write(text)
        except OSError as err:
            logging.fatal(f"Cannot write `{filepath}`: {err}")
            raise ConfigurationError(f"Cannot write artifact `{filepath}`: {err}") from err

    def _sidecar(self, name: str):

        sidecar = Sidecar(tool_version=self.tool_version, config_hash=self.config_hash, command=self.command, artifact=os.path.basename(name))
        self._write(self.prepare(f"{name}.meta.json"), sidecar.model_dump_json(indent=2) + "\n")

    def write_table(self, name: str, header: Sequence[str], rows: np.ndarray):

        filepath = self.prepare(name)
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        lines = [",".join(header)] + [",".join(NUMBER_FORMAT % value for value in row) for row in rows]
        self._write(filepath, "\n".join(lines) + "\n")
        self._sidecar(name)
        logging.info(f"Wrote `{filepath}` ({rows.shape[0]} rows).")

    def write_document(self, name: str, document: BaseModel):

        filepath = self.prepare(name)
        self._write(filepath, document.model_dump_json(indent=2) + "\n")
        self._sidecar(name)
        logging.info(f"Wrote `{filepath}`.")

    def register(self, name: str):
        """Write the sidecar of an artifact produced elsewhere, such as a figure."""

        self._sidecar(name)

    def read_table(self, name: str, description: str) -> Tuple[List[str], np.ndarray]:
        """Read a table written by :meth:`write_table`.

        :param description: What the table holds, used in the missing artifact message.
        """

        return read_table(self.path(name), description)


def read_table(filepath: str, description: str) -> Tuple[List[str], np.ndarray]:

    if not os.path.isfile(filepath):
        logging.fatal(f"Missing {description} at `{filepath}`.")
        raise MissingArtifactError(f"missing {description} (`{filepath}` not found); run the producing command first.")
    with open(filepath, "r") as file:
        header = file.readline().strip().split(",")
        rows = np.loadtxt(file, delimiter=",", ndmin=2)
    if rows.shape[1] != len(header):
        raise MissingArtifactError(f"{description} at `{filepath}` is malformed: {rows.shape[1]} columns for {len(header)} names.")
    return header, rows
