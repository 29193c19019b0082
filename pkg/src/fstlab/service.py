"""HTTP service wrapping the experiment harness.

Endpoints accept the same flat ``key = value`` configuration the CLI reads,
run synchronously (runs are desk scale), and hand back manifests. Completed
runs are kept in an in-process registry keyed by run id; `compare` and
`curves` also accept manifest paths so results from earlier processes stay
usable.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import ConfigError, parse_config_text, plan_from_mapping
from .harness import RunManifest, compare, export_curves, load_manifest, render_compare, run


class RunRequest(BaseModel):
    config_text: str = ""
    overrides: dict[str, str] = Field(default_factory=dict)


class RunResponse(BaseModel):
    run_id: str
    manifest_path: str
    manifest: dict


class CompareRequest(BaseModel):
    manifests: list[str] = Field(default_factory=list)  # paths
    run_ids: list[str] = Field(default_factory=list)


class CompareRowModel(BaseModel):
    variant: str
    n_seeds: int
    mean: float
    sd: float
    delta: float | None


class CompareResponse(BaseModel):
    rows: list[CompareRowModel]
    table: str


class CurvesRequest(BaseModel):
    manifests: list[str] = Field(default_factory=list)
    run_ids: list[str] = Field(default_factory=list)
    out: str | None = None


class CurvesResponse(BaseModel):
    path: str


def create_app() -> FastAPI:
    app = FastAPI(title="fstlab", version=__version__)
    registry: dict[str, RunManifest] = {}

    def resolve(paths: list[str], run_ids: list[str]) -> list[RunManifest]:
        out = []
        for rid in run_ids:
            if rid not in registry:
                raise HTTPException(status_code=404, detail=f"unknown run id {rid!r}")
            out.append(registry[rid])
        for p in paths:
            try:
                out.append(load_manifest(p))
            except (OSError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=f"cannot load manifest {p}: {exc}")
        if not out:
            raise HTTPException(status_code=400, detail="no runs given")
        return out

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/runs", response_model=RunResponse)
    def create_run(req: RunRequest):
        try:
            mapping = parse_config_text(req.config_text)
            mapping.update({k.replace("-", "_"): v for k, v in req.overrides.items()})
            plan = plan_from_mapping(mapping)
        except (ConfigError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        manifest = run(plan)
        registry[manifest.run_id] = manifest
        return RunResponse(
            run_id=manifest.run_id,
            manifest_path=manifest.path,
            manifest=_manifest_dict(manifest),
        )

    @app.get("/runs")
    def list_runs():
        return {"runs": sorted(registry)}

    @app.get("/runs/{run_id}")
    def get_run(run_id: str):
        if run_id not in registry:
            raise HTTPException(status_code=404, detail=f"unknown run id {run_id!r}")
        return _manifest_dict(registry[run_id])

    @app.post("/compare", response_model=CompareResponse)
    def compare_runs(req: CompareRequest):
        manifests = resolve(req.manifests, req.run_ids)
        try:
            rows = compare(manifests)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        models = [CompareRowModel(variant=r.variant, n_seeds=r.n_seeds, mean=r.mean, sd=r.sd, delta=r.delta) for r in rows]
        return CompareResponse(rows=models, table=render_compare(rows))

    @app.post("/curves", response_model=CurvesResponse)
    def curves(req: CurvesRequest):
        manifests = resolve(req.manifests, req.run_ids)
        return CurvesResponse(path=export_curves(manifests, req.out))

    return app


def _manifest_dict(m: RunManifest) -> dict:
    import json

    d = json.loads(m.to_json())
    d["path"] = m.path
    return d


app = create_app()
