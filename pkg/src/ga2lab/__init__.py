"""Regional traffic-signal control laboratory.

Modules: ``network`` (grid graph and static matrices), ``sim`` / ``snf`` (vehicle
and fluid queue dynamics), ``partition`` (star-shaped regions), ``nn`` (autodiff
and GAT layers), ``ga2`` (centralised attention embeddings), ``agents`` /
``train`` (regional Q-learning), ``baselines``, ``experiment`` and ``cli``.
"""

__version__ = "0.1.0"
