"""Fractional dynamical network analysis of EEG for cognitive-fatigue prediction.

Modules:
    ingest        -- delimited-text EEG loading and windowing
    synth         -- fBm, binomial cascades, fractional network simulation
    multifractal  -- wavelet-leader multifractal formalism
    fracnet       -- Grunwald-Letnikov operators and EM coupling identification
    complexity    -- LZ76 complexity index of coupling trajectories
    distance      -- 1-D Wasserstein distances and feature assembly
    learn         -- contrastive encoders, classifier, cross-validation
    pipeline      -- config-driven end-to-end runs and reports
"""

__version__ = "0.1.0"
