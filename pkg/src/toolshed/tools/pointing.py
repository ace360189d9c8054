"""Object pointing, two heterogeneous backends.

Both resolve the query name against fixture annotations by lowercase token
overlap (ties lexicographic). The second backend perturbs each coordinate by
a seeded offset of magnitude <= 0.01, modeling a different detector.
"""

from __future__ import annotations

from ..errors import ToolFailure
from ..wire import ToolResult
from .common import as_image, fmt_point, image_out, need, overlay_points
from .context import ToolContext

PERTURB = 0.01


def _tokens(name: str) -> set[str]:
    return set(name.lower().split())


def _match_object(ctx: ToolContext, obj_name: str) -> tuple[str, list[tuple[float, float]]]:
    fixture = ctx.require_fixture()
    query = _tokens(obj_name)
    scored = [
        (len(query & _tokens(name)), name)
        for name, ann in fixture.objects.items()
        if ann.points
    ]
    scored = [(s, n) for s, n in scored if s > 0]
    if not scored:
        raise ToolFailure(f"not found: {obj_name}")
    scored.sort(key=lambda sn: (-sn[0], sn[1]))
    name = scored[0][1]
    return name, list(fixture.objects[name].points)


def _var_name(obj_name: str, plural: bool) -> str:
    return obj_name.replace(" ", "_") + ("_detections" if plural else "_detection")


def _perturb(ctx: ToolContext, obj_name: str,
             points: list[tuple[float, float]]) -> list[tuple[float, float]]:
    fixture = ctx.require_fixture()
    rng = ctx.rng("point2", fixture.noise_seed, obj_name)
    out = []
    for x, y in points:
        dx, dy = rng.uniform(-PERTURB, PERTURB, size=2)
        out.append((min(1.0, max(0.0, x + dx)), min(1.0, max(0.0, y + dy))))
    return out


def _detect(ctx: ToolContext, args: dict, backend: str, mode: str) -> ToolResult:
    image = as_image(need(args, "image"))
    obj_name = need(args, "obj_name")
    if not isinstance(obj_name, str) or not obj_name.strip():
        raise ToolFailure("not found: (empty object name)")
    matched, points = _match_object(ctx, obj_name)
    if backend == "point2":
        points = _perturb(ctx, obj_name, points)
    if mode == "one":
        points = points[:1]
    overlay = image_out("detect_overlay", overlay_points(image, points))
    rendered = ", ".join(fmt_point(p) for p in points)
    text = f"Detected {len(points)} instance(s) of '{obj_name}': {rendered}"
    if mode == "one":
        variables = {_var_name(obj_name, False): [points[0][0], points[0][1]]}
    else:
        variables = {_var_name(obj_name, True): [[p[0], p[1]] for p in points]}
    return ToolResult.ok(text, image=overlay, variables=variables)


def make_methods(backend: str) -> dict:
    return {
        "detect_one": lambda ctx, args: _detect(ctx, args, backend, "one"),
        "detect_all": lambda ctx, args: _detect(ctx, args, backend, "all"),
    }
