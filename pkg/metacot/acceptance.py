"""
Umbrales de aceptación versionados.

Todas las tolerancias con las que el pipeline decide si una etapa pasó
viven aquí. Se pueden sobreescribir por corrida con claves
``acceptance.<nombre> = valor`` en la configuración; el reporte guarda la
versión y los valores efectivos.
"""

from dataclasses import asdict, dataclass

ACCEPTANCE_VERSION = "1.0"


@dataclass(frozen=True)
class AcceptanceThresholds:
    # pretraining
    pretrain_sup_error: float = 1e-3
    # búsqueda: fracción mínima de E_s encontrada
    search_min_recall: float = 0.5
    # guía: aceleración ≥ fracción·(ε_max/ε) cuando ε_max/ε > 1
    guidance_min_speedup_fraction: float = 0.3
    # PPO
    ppo_band_low: float = 0.8
    ppo_band_high: float = 1.0
    ppo_tv_factor: float = 2.0
    # destilado
    distill_sup_error: float = 1e-6
    laziness_tolerance: float = 1e-9
    distilled_hitting_factor: float = 10.0
    # oráculo
    detailed_balance_tolerance: float = 1e-10
    coupling_tolerance: float = 1e-9
    # estimaciones Monte Carlo
    mc_stderr_multiplier: float = 5.0
    slope_low: float = 0.8
    slope_high: float = 1.2
    invariance_ratio: float = 1.5

    def to_dict(self) -> dict:
        payload = asdict(self)
        payload['version'] = ACCEPTANCE_VERSION
        return payload
