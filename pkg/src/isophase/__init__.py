"""Isochronal phase of travelling waves and bumps under additive noise.

Spectral Galerkin models, exponential integrators with tangent and adjoint
propagation, relative-equilibrium families, the isochron map and its
derivatives, SPDE path simulation, a term-by-term Ito ledger for the phase,
and a numerical audit of the standing assumptions.
"""

from .spectral import (DegenerateSpectrumError, Field, Grid, SpectralError, SpectralOperator,
                       gap_constant, make_basis, make_operator, semigroup_apply, trace_constant)
from .models import (ModelError, NeuralField, OracleOscillator, ReactionDiffusion, make_model)
from .flow import BlowUpError, FlowConfig, FlowError, dflow, d2flow, flow, flow_trace_sums, flow_trace_terms
from .manifold import (ManifoldError, Phase, WaveFamily, audit_manifold, find_relative_equilibrium,
                       load_family, project, save_family)
from .isochron import (BasinEscapeError, IsochronConfig, IsochronError, d2pi, dpi, dpi_L, dpi_V,
                       grad_pi, isochron, isochron_batch, pi_trace_sums, pi_trace_terms)
from .stochastic import (NoiseError, NoiseModel, PathSample, make_noise, regularity_probe,
                         simulate_ensemble, spde_simulate)
from .ito import (ItoLedger, LedgerError, PartitionDiagnostics, ito_decompose, partition_terms,
                  residual_order_sweep)
from .audit import AuditConfig, AuditReport, run_audit
from .config import ConfigError, bundled_config, load_config
from .fixtures import fixture

__version__ = "0.1.0"
