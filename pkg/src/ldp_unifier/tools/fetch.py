import gzip
import logging
import shutil
from pathlib import Path
from typing import Union

import requests

from ldp_unifier.errors import IngestError

logger = logging.getLogger('ldp_unifier.tools')

GOWALLA_URL = 'https://snap.stanford.edu/data/loc-gowalla_totalCheckins.txt.gz'
CHUNK = 1 << 20


def fetch_gowalla(dest: Union[str, Path], url: str = GOWALLA_URL, timeout: float = 20) -> Path:
    """Download the Gowalla check-in file and store it decompressed at ``dest``."""
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    archive = dest.with_name(dest.name + '.gz.part')
    try:
        logger.info(f"Downloading Gowalla check-ins from {url}")
        with requests.get(url, stream=True, timeout=timeout) as resp:
            resp.raise_for_status()
            with open(archive, 'wb') as f:
                for chunk in resp.iter_content(chunk_size=CHUNK):
                    f.write(chunk)
        if url.endswith('.gz'):
            with gzip.open(archive, 'rb') as src, open(dest, 'wb') as out:
                shutil.copyfileobj(src, out, CHUNK)
            archive.unlink()
        else:
            archive.replace(dest)
    except requests.RequestException as e:
        logger.error(f"Gowalla download failed: {e}")
        raise IngestError(f"download from {url} failed: {e}")
    except (OSError, gzip.BadGzipFile) as e:
        logger.error(f"Writing {dest} failed: {e}")
        raise IngestError(f"cannot store Gowalla data at {dest}: {e}")
    logger.info(f"Gowalla check-ins saved to {dest} ({dest.stat().st_size} bytes)")
    return dest
