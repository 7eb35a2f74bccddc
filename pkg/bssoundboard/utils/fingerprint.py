import hashlib
import json
from pathlib import Path
from typing import Any

from bssoundboard import __version__

FINGERPRINT_FILE = "fingerprint.json"


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=str)


def fingerprint(stage: str, arguments: dict[str, Any]) -> dict[str, Any]:
    """
    Huella de una etapa: nombre, argumentos normalizados y versión, más el SHA-256 de su JSON canónico.

    Dos ejecuciones con la misma huella producen las mismas salidas.
    """
    body = {"stage": stage, "arguments": json.loads(canonical_json(arguments)), "version": __version__}
    body["sha256"] = hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()
    return body


def write_fingerprint(out_dir: str | Path, stage: str, arguments: dict[str, Any]) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / FINGERPRINT_FILE
    path.write_text(json.dumps(fingerprint(stage, arguments), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
