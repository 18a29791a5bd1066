"""Model checkpoints as .npz archives.

One array per parameter or buffer, keyed by its dotted path in the layer
tree, plus ``__format__`` (format version) and ``__config__`` (canonical
run configuration text).
"""
from typing import Dict, Tuple
import logging
import os
import numpy as np
from keys import Keys
from classes.errors import DataError, DimensionError
from classes.layers import Layer

logger = logging.getLogger(__name__)

FORMAT_KEY = "__format__"
CONFIG_KEY = "__config__"


def save_checkpoint(model: Layer, path: str, config_text: str = "") -> str:
    state = model.state_dict()
    state[FORMAT_KEY] = np.array(Keys.CHECKPOINT_FORMAT)
    state[CONFIG_KEY] = np.array(config_text)
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    # np.savez appends .npz to names without it
    with open(path, "wb") as f:
        np.savez(f, **state)
    logger.info("checkpoint with %d arrays written to %s", len(state) - 2, path)
    return path


def read_checkpoint(path: str) -> Tuple[Dict[str, np.ndarray], str]:
    """Returns (state dict, config text) after checking the format version"""
    if not os.path.exists(path):
        raise DataError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as archive:
        entries = {name: archive[name] for name in archive.files}
    version = str(entries.pop(FORMAT_KEY, ""))
    if version != Keys.CHECKPOINT_FORMAT:
        raise DataError(f"{path} has checkpoint format {version!r}, expected {Keys.CHECKPOINT_FORMAT!r}")
    config_text = str(entries.pop(CONFIG_KEY, ""))
    return entries, config_text


def load_checkpoint(model: Layer, path: str) -> str:
    state, config_text = read_checkpoint(path)
    try:
        model.load_state_dict(state)
    except (KeyError, DimensionError) as e:
        raise DataError(f"{path} does not match the model: {e}") from e
    return config_text
