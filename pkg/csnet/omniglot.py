"""
Omniglot ingestion: alphabet/character/sample image tree -> :class:`Dataset`.

Every character is one class with exactly 20 drawings. Base characters are
split before augmentation (the first 1200 in sorted order for training,
with a seeded 100 of those held out for validation, the rest for testing),
then each rotation by 90°, 180° and 270° becomes a class of its own that
inherits its base character's split.

:func:`fetch_omniglot` downloads and unpacks the two public archives when
they are not already on disk.
"""

import io
import os
import zipfile
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import numpy as np
import requests
from PIL import Image, ImageOps
from requests.adapters import HTTPAdapter

try:  # urllib3 ships with requests
    from urllib3.util.retry import Retry
except Exception:  # pragma: no cover
    Retry = None

from .episodes import ClassRecord, Dataset, rotate_class
from .errors import IngestionError, IntegrityError
from .logger import logger

OMNIGLOT_URL = "https://github.com/brendenlake/omniglot/raw/master/python/{part}.zip"
OMNIGLOT_PARTS = ("images_background", "images_evaluation")

IMAGE_SIZE = 28
SAMPLES_PER_CHARACTER = 20
TRAIN_CHARACTERS = 1200
VAL_CHARACTERS = 100
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

REQUEST_TIMEOUT = (15, 300)  # (connect, read) seconds

CACHE_DIR = os.environ.get("CSNET_CACHE_DIR", "data")


def _make_session(pool_size=2):
    """A requests Session with automatic retries/backoff."""
    session = requests.Session()
    if Retry is not None:
        retry = Retry(
            total=4,
            backoff_factor=1.5,
            status_forcelist=(429, 500, 502, 503, 504),
            allowed_methods=frozenset(["GET"]),
        )
        adapter = HTTPAdapter(
            max_retries=retry, pool_connections=pool_size, pool_maxsize=pool_size
        )
    else:  # pragma: no cover
        adapter = HTTPAdapter(pool_connections=pool_size, pool_maxsize=pool_size)
    session.mount("https://", adapter)
    session.mount("http://", adapter)
    return session


def fetch_omniglot(dest=None, session=None):
    """Download and unpack both Omniglot archives under ``dest``.

    Parts whose directory already exists are skipped. Returns ``dest``.
    """
    dest = Path(dest or Path(CACHE_DIR) / "omniglot")
    dest.mkdir(parents=True, exist_ok=True)
    close = session is None
    if session is None:
        session = _make_session()
    failed = []
    try:
        for part in OMNIGLOT_PARTS:
            if (dest / part).is_dir():
                logger.info(f"omniglot: {part} already present, skipping")
                continue
            url = OMNIGLOT_URL.format(part=part)
            logger.info(f"omniglot: downloading {url}")
            try:
                response = session.get(url, timeout=REQUEST_TIMEOUT)
                response.raise_for_status()
                with zipfile.ZipFile(io.BytesIO(response.content)) as archive:
                    archive.extractall(dest)
            except (requests.RequestException, zipfile.BadZipFile) as exc:
                logger.warning(f"omniglot: {part} failed: {exc}")
                failed.append(url)
    finally:
        if close:
            session.close()
    if failed:
        raise IngestionError("omniglot download failed", failed)
    return dest


def _is_image(path):
    return path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES


def character_dirs(root):
    """Sorted character directories (alphabet/character) under ``root``.

    When ``root`` holds the two archive directories, background characters
    come before evaluation characters.
    """
    root = Path(root)
    if not root.is_dir():
        raise IngestionError("omniglot root is not a directory", [root])
    parts = [root / p for p in OMNIGLOT_PARTS if (root / p).is_dir()] or [root]
    characters = []
    for part in parts:
        for alphabet in sorted(p for p in part.iterdir() if p.is_dir()):
            for character in sorted(p for p in alphabet.iterdir() if p.is_dir()):
                if any(_is_image(f) for f in character.iterdir()):
                    characters.append(character)
    return characters


def load_image(path, size=IMAGE_SIZE, invert=True):
    """Grayscale [1, size, size] array with values in [0, 1]."""
    with Image.open(path) as image:
        image = image.convert("L")
        if invert:
            # Omniglot strokes are dark on white; make them the bright signal
            image = ImageOps.invert(image)
        if image.size != (size, size):
            image = image.resize((size, size), Image.Resampling.BILINEAR)
        return (np.asarray(image, dtype=np.float64) / 255.0)[None, :, :]


def _split_for(index, val_ids, train_characters):
    if index >= train_characters:
        return "test"
    return "val" if index in val_ids else "train"


def load_omniglot(
    root,
    augment_rotations=True,
    size=IMAGE_SIZE,
    train_characters=TRAIN_CHARACTERS,
    val_characters=VAL_CHARACTERS,
    seed=0,
    invert=True,
    samples_per_class=SAMPLES_PER_CHARACTER,
    max_workers=8,
):
    characters = character_dirs(root)
    if not characters:
        raise IngestionError("no character directories found", [root])

    files, bad_counts = [], []
    for character in characters:
        images = sorted(f for f in character.iterdir() if _is_image(f))
        if len(images) != samples_per_class:
            bad_counts.append(f"{character} ({len(images)})")
        files.append(images)
    if bad_counts:
        shown = ", ".join(bad_counts[:10])
        raise IntegrityError(
            f"{len(bad_counts)} characters do not have {samples_per_class} samples: {shown}"
        )

    jobs = [(c, s, path) for c, images in enumerate(files) for s, path in enumerate(images)]
    pixels = np.zeros((len(characters), samples_per_class, 1, size, size))
    broken = []
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {pool.submit(load_image, path, size, invert): (c, s, path) for c, s, path in jobs}
        for future in as_completed(futures):
            c, s, path = futures[future]
            try:
                pixels[c, s] = future.result()
            except (OSError, ValueError) as exc:
                logger.error(f"omniglot: cannot decode {path}: {exc}")
                broken.append(path)
    if broken:
        raise IngestionError("corrupt or unreadable images", sorted(broken))

    train_pool = min(train_characters, len(characters))
    if val_characters > train_pool:
        raise IntegrityError(
            f"cannot hold out {val_characters} validation characters from {train_pool}"
        )
    rng = np.random.default_rng(seed)
    val_ids = set(int(i) for i in rng.choice(train_pool, size=val_characters, replace=False))

    classes = []
    root = Path(root)
    for b, character in enumerate(characters):
        split = _split_for(b, val_ids, train_characters)
        source = str(character.relative_to(root))
        base = ClassRecord(b, pixels[b], split, source)
        if not augment_rotations:
            classes.append(base)
            continue
        for k in range(4):
            classes.append(rotate_class(base, k, global_id=4 * b + k))

    ds = Dataset(classes, (1, size, size), "omniglot")
    counts = ds.summary()
    logger.info(
        f"omniglot: {len(characters)} characters -> {len(classes)} classes "
        f"(train {counts['train']['classes']}, val {counts['val']['classes']}, "
        f"test {counts['test']['classes']})"
    )
    return ds
