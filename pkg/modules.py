import hashlib
import json
import logging
import os
import sys
import jsonlines

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str = "INFO"):
    """Configures the root logger once; later calls only change the level"""
    root = logging.getLogger()
    if not root.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
    root.setLevel(getattr(logging, str(level).upper(), logging.INFO))


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_json(data, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w") as f:
        json.dump(data, f, indent=4, sort_keys=True)


def read_json(path: str):
    with open(path, "r") as f:
        return json.load(f)


def write_jsonl(records, path: str):
    with jsonlines.open(path, mode="w", sort_keys=True) as writer:
        writer.write_all(records)


def read_jsonl(path: str):
    with jsonlines.open(path) as reader:
        return list(reader)


def split_list(value):
    """'a,b' or ('a', 'b') or 'a' -> ['a', 'b']; fire hands over either form"""
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]
