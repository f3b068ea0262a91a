import numpy as np

from currents import FlowMapping, builtin_chain, circle, lie_derivative_pair, mass, pair, pushforward, segment
from fields import AnalyticField, builtin
from flow import IntegratorConfig, advance
from forms import form_catalog
from frobenius import commutativity_lattice, invariance_defect
from transport import vae_lagrangian

cfg = IntegratorConfig(dt=1e-2)

# Example 1: Flow map, Jacobian and density
print("=" * 60)
print("Example 1: Dilation flow")
sample = advance(builtin("dilation", 2), 0.5, np.array([[1.0, 0.5]]), cfg)
print(f"Endpoint: {sample.endpoint[0]}")
print(f"det grad X_t: {sample.det[0]:.6f} (expected {np.exp(1.0):.6f})")
print(f"Density: {sample.density[0]:.6f}")
print()

# Example 2: Field from expressions
print("=" * 60)
print("Example 2: Representation formula")
b = AnalyticField.from_exprs(["-y", "x"])
v = vae_lagrangian(b, builtin("constant", 2), 1.0, np.array([[0.3, 0.2]]), cfg)
print(f"v_t for e1 under rotation: {v[0]} (expected [{np.cos(1.0):.6f} {np.sin(1.0):.6f}])")
print()

# Example 3: Pushing a curve
print("=" * 60)
print("Example 3: Pushforward of a segment")
chain = segment((0.1, 0.0), (0.6, 0.2))
pushed = pushforward(chain, FlowMapping(builtin("dilation", 2), 1.0, cfg))
print(f"Mass before: {mass(chain):.6f}, after: {mass(pushed):.6f} (ratio e = {np.e:.6f})")
omega = form_catalog(2)[0]
print(f"<T, {omega.label}> = {pair(chain, omega):.6f}")
print(f"<L_b T, {omega.label}> = {lie_derivative_pair(chain, builtin('dilation', 2), omega):.6f}")
print()

# Example 4: Commuting flows
print("=" * 60)
print("Example 4: Commutativity")
report = commutativity_lattice(builtin("rotation2d"), builtin("dilation", 2), cfg=cfg)
print(f"Worst defect: {report.worst:.3e}, bracket residual: {report.bracket_residual:.3e}")
print(f"Commute: {report.verdict}")
print()

# Example 5: Invariant currents
print("=" * 60)
print("Example 5: Invariance under rotation")
for name, current in [("circles", builtin_chain("rings", 2, radii=[0.5, 1.0], n=512)),
                      ("radial segment", segment((0.0, 0.0), (1.0, 0.0)))]:
    invariance = invariance_defect(builtin("rotation2d"), current, [0.5, 1.0], cfg=cfg)
    print(f"{name}: distance {invariance.worst:.3e}, Lie derivative {invariance.hypothesis_residual:.3e}")
print()

# Example 6: A single circle keeps its mass under any rotation
print("=" * 60)
print("Example 6: Rotated circle")
ring = circle(radius=0.7, n=256)
turned = pushforward(ring, FlowMapping(builtin("rotation2d"), 2.0, cfg))
print(f"Mass before: {mass(ring):.6f}, after: {mass(turned):.6f}")
print()
