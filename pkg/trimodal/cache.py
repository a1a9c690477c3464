from __future__ import annotations
from collections.abc import Iterable, Iterator, Mapping
from contextlib import contextmanager
import logging
import os
from pathlib import Path
import tempfile
import time

import numpy as np

from .coretypes import ECondition, Embedding, EModality
from .errors import CheckpointError

logger = logging.getLogger(__name__)


class EmbeddingCache:
    """
    On-disk embeddings, one `.npz` file per (checkpoint hash, condition, modality).

    Files hold a `sample_ids` string array and a row-aligned `vectors` matrix.
    Writes merge with the current content and replace the file atomically, so
    concurrent evaluators never observe a partial file. The merge runs under a
    `.lock` file next to the target, so concurrent writers to one file take turns.
    A lock left behind by a killed process must be removed by hand.

    Attributes:
        root (Path): Cache directory.
        lock_timeout (float): Seconds a writer waits for the lock before failing.
    """

    def __init__(self, root: str | Path, lock_timeout: float = 60.0) -> None:
        self.root = Path(root)
        self.lock_timeout = lock_timeout

    def path(self, checkpoint_hash: str, condition: ECondition, modality: EModality) -> Path:
        return self.root / checkpoint_hash[:16] / f"{condition}_{modality}.npz"

    @contextmanager
    def _locked(self, path: Path) -> Iterator[None]:
        lock_path = path.with_suffix(".lock")
        deadline = time.monotonic() + self.lock_timeout
        while True:
            try:
                handle = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                break
            except FileExistsError:
                if time.monotonic() >= deadline:
                    raise CheckpointError(
                        f"Embedding cache file '{path}' stayed locked by '{lock_path}'."
                    ) from None
                time.sleep(0.01)
        try:
            yield
        finally:
            os.close(handle)
            lock_path.unlink(missing_ok=True)

    def _read(self, path: Path) -> dict[str, np.ndarray]:
        if not path.is_file():
            return {}
        try:
            with np.load(path, allow_pickle=False) as data:
                return dict(zip(data["sample_ids"].tolist(), data["vectors"]))
        except (OSError, ValueError, KeyError) as error:
            raise CheckpointError(f"Corrupt embedding cache file '{path}': {error}") from None

    def get_many(
        self,
        checkpoint_hash: str,
        condition: ECondition,
        modality: EModality,
        sample_ids: Iterable[str],
    ) -> dict[str, Embedding]:
        """
        Look embeddings up.

        Returns:
            dict[str, Embedding]: The cached subset of `sample_ids`.
        """
        stored = self._read(self.path(checkpoint_hash, condition, modality))
        return {
            sample_id: Embedding(stored[sample_id], modality, sample_id)
            for sample_id in sample_ids
            if sample_id in stored
        }

    def put_many(
        self,
        checkpoint_hash: str,
        condition: ECondition,
        modality: EModality,
        embeddings: Mapping[str, Embedding],
    ) -> Path:
        path = self.path(checkpoint_hash, condition, modality)
        path.parent.mkdir(parents=True, exist_ok=True)
        with self._locked(path):
            stored = self._read(path)
            stored.update({sample_id: embedding.vector for sample_id, embedding in embeddings.items()})
            sample_ids = sorted(stored)
            handle, temp_name = tempfile.mkstemp(prefix=f".{path.stem}.", suffix=".npz", dir=path.parent)
            try:
                with os.fdopen(handle, "wb") as stream:
                    np.savez(
                        stream,
                        sample_ids=np.array(sample_ids, dtype=str),
                        vectors=np.stack([stored[sample_id] for sample_id in sample_ids]),
                    )
                os.replace(temp_name, path)
            except BaseException:
                Path(temp_name).unlink(missing_ok=True)
                raise
        logger.debug("Cached %d %s embeddings in %s.", len(embeddings), modality, path)
        return path
