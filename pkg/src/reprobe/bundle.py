"""Plugin bundle handling: a tar archive with manifest.json at its root and,
for external plugins, the executable entry it names."""

from __future__ import annotations

import hashlib
import io
import json
import tarfile
from pathlib import Path
from typing import Any

from .errors import MalformedBundle, SchemaInvalid
from .model import COLLECTOR, PUBLISHER, ParamSpec, PluginDescriptor
from .plugins import ANALYZER_IDS

MANIFEST_NAME = "manifest.json"


def bundle_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _open_tar(data: bytes) -> tarfile.TarFile:
    try:
        return tarfile.open(fileobj=io.BytesIO(data), mode="r:*")
    except tarfile.TarError as exc:
        raise MalformedBundle(f"not a readable tar archive: {exc}") from exc


def _member_names(tar: tarfile.TarFile) -> set[str]:
    names = set()
    for member in tar.getmembers():
        name = member.name.lstrip("./")
        if name.startswith("/") or ".." in Path(name).parts:
            raise SchemaInvalid(f"unsafe bundle member path: {member.name!r}")
        names.add(name)
    return names


def parse_manifest(manifest: Any) -> PluginDescriptor:
    """Turn a parsed manifest.json into an external PluginDescriptor."""
    if not isinstance(manifest, dict):
        raise SchemaInvalid("manifest must be a JSON object")
    problems = []
    plugin_id = manifest.get("id")
    if not isinstance(plugin_id, str) or not plugin_id:
        problems.append("id must be a nonempty string")
    kind = manifest.get("kind")
    if kind not in (COLLECTOR, PUBLISHER):
        problems.append(f"kind must be collector|publisher, got {kind!r}")
    entry = manifest.get("entry")
    if not isinstance(entry, str) or not entry:
        problems.append("entry must name an executable inside the bundle")
    version = manifest.get("version", "0.0.0")
    if not isinstance(version, str):
        problems.append("version must be a string")

    schema: list[ParamSpec] = []
    raw_schema = manifest.get("paramSchema", [])
    if not isinstance(raw_schema, list):
        problems.append("paramSchema must be a list")
        raw_schema = []
    for item in raw_schema:
        try:
            schema.append(
                ParamSpec(
                    name=str(item["name"]),
                    type=str(item["type"]),
                    required=bool(item.get("required", False)),
                    default=item.get("default"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"bad paramSchema entry {item!r}: {exc}")

    samplers: tuple[str, ...] = ()
    analyzers: tuple[str, ...] = ()
    if kind == COLLECTOR:
        samplers = tuple(str(s) for s in manifest.get("samplers", ["main"]))
        analyzers = tuple(str(a) for a in manifest.get("analyzers", ANALYZER_IDS))
        if not samplers:
            problems.append("collector manifests need at least one sampler id")
    if problems:
        raise SchemaInvalid("; ".join(problems))
    try:
        return PluginDescriptor(
            id=plugin_id,
            kind=kind,
            provenance="external",
            version=version,
            param_schema=tuple(schema),
            samplers=samplers,
            analyzers=analyzers,
            entry=str(entry).lstrip("./"),
        )
    except ValueError as exc:
        raise SchemaInvalid(str(exc)) from exc


def read_bundle(data: bytes) -> PluginDescriptor:
    """Parse and validate a bundle without extracting it."""
    with _open_tar(data) as tar:
        names = _member_names(tar)
        if MANIFEST_NAME not in names:
            raise MalformedBundle(f"bundle lacks {MANIFEST_NAME} at its root")
        fh = tar.extractfile(MANIFEST_NAME)
        if fh is None:
            raise MalformedBundle(f"{MANIFEST_NAME} is not a regular file")
        try:
            manifest = json.loads(fh.read().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise MalformedBundle(f"unparseable {MANIFEST_NAME}: {exc}") from exc
        desc = parse_manifest(manifest)
        if desc.entry not in names:
            raise SchemaInvalid(f"entry {desc.entry!r} not found in bundle")
    return desc


def extract_bundle(data: bytes, dest: Path) -> Path:
    """Extract a validated bundle; returns the absolute entry path."""
    desc = read_bundle(data)
    dest.mkdir(parents=True, exist_ok=True)
    with _open_tar(data) as tar:
        for member in tar.getmembers():
            name = member.name.lstrip("./")
            if not member.isfile():
                continue
            target = dest / name
            target.parent.mkdir(parents=True, exist_ok=True)
            fh = tar.extractfile(member)
            assert fh is not None
            target.write_bytes(fh.read())
    entry_path = dest / desc.entry
    entry_path.chmod(entry_path.stat().st_mode | 0o755)
    return entry_path


def make_bundle(manifest: dict, files: dict[str, bytes]) -> bytes:
    """Assemble a bundle in memory (used by tests and tooling)."""
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode="w") as tar:
        payload = json.dumps(manifest).encode("utf-8")
        info = tarfile.TarInfo(MANIFEST_NAME)
        info.size = len(payload)
        tar.addfile(info, io.BytesIO(payload))
        for name, content in files.items():
            info = tarfile.TarInfo(name)
            info.size = len(content)
            info.mode = 0o755
            tar.addfile(info, io.BytesIO(content))
    return buffer.getvalue()
