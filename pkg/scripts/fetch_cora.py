"""Fetch the Cora citation graph and write it in the plain-text dataset layout.

The LINQS release (``cora.content`` / ``cora.cites``) ships inside the ``pgl``
source distribution on PyPI, which is reachable from package-mirror-only
environments. The files are converted to::

    <out>/edges.txt     "src dst" per line, 0-based ids
    <out>/features.txt  one row of 0/1 floats per node
    <out>/labels.txt    one class id per line

Usage: python scripts/fetch_cora.py [--out data/cora]
"""
import argparse
import io
import json
import sys
import tarfile
import urllib.request
from pathlib import Path

PYPI_JSON = "https://pypi.org/pypi/pgl/json"
MEMBER_PREFIX = "pgl-2.2.6/pgl/data/cora/"


def _download_sdist() -> bytes:
    meta = json.load(urllib.request.urlopen(PYPI_JSON, timeout=60))
    sdist = [u for u in meta["releases"].get("2.2.6", []) if u["packagetype"] == "sdist"]
    if not sdist:
        raise RuntimeError("no sdist listed for pgl 2.2.6")
    return urllib.request.urlopen(sdist[0]["url"], timeout=300).read()


def convert(content: str, cites: str, out: Path) -> dict:
    rows = [line.split() for line in content.splitlines() if line.strip()]
    paper_ids = [r[0] for r in rows]
    index = {pid: i for i, pid in enumerate(paper_ids)}
    classes = sorted({r[-1] for r in rows})
    class_id = {c: k for k, c in enumerate(classes)}

    out.mkdir(parents=True, exist_ok=True)
    with open(out / "features.txt", "w") as fh:
        for r in rows:
            fh.write(" ".join(r[1:-1]) + "\n")
    with open(out / "labels.txt", "w") as fh:
        for r in rows:
            fh.write(f"{class_id[r[-1]]}\n")

    seen = set()
    with open(out / "edges.txt", "w") as fh:
        fh.write("# cora.cites, cited -> citing, converted to 0-based ids\n")
        for line in cites.splitlines():
            parts = line.split()
            if len(parts) != 2:
                continue
            a, b = index[parts[0]], index[parts[1]]
            key = (min(a, b), max(a, b))
            if a == b or key in seen:
                continue
            seen.add(key)
            fh.write(f"{a} {b}\n")
    return {
        "nodes": len(rows),
        "edges": len(seen),
        "classes": len(classes),
        "features": len(rows[0]) - 2,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/cora", type=Path)
    args = parser.parse_args(argv)

    blob = _download_sdist()
    with tarfile.open(fileobj=io.BytesIO(blob)) as tar:
        content = tar.extractfile(MEMBER_PREFIX + "cora.content").read().decode()
        cites = tar.extractfile(MEMBER_PREFIX + "cora.cites").read().decode()
    stats = convert(content, cites, args.out)
    print(
        f"{stats['nodes']} nodes, {stats['edges']} edges, "
        f"{stats['classes']} classes, {stats['features']} features -> {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
