"""Throwaway calibration driver (not part of the package)."""
import sys, time, itertools, json
import numpy as np
from dataclasses import replace
from concurrent.futures import ProcessPoolExecutor
from lifelong_ctc.training import default_config, build_datasets, run_sequential
from lifelong_ctc.lifelong import RegularizerConfig
from lifelong_ctc.data import DomainSpec, symbol_prototypes

V = 8
LO  = [3.0, 2.5, 2.0, 1.5, 0.6, 0.4, 0.3, 0.2]
MID = [1.0]*V
HI  = list(reversed(LO))
P = symbol_prototypes(V, 8)

def domains(coupling):
    return [
        DomainSpec(task_id=0, vocab_size=V, symbol_distribution=LO,  transition_bias=0.25,
                   feature_noise_sigma=0.10, feature_shift=(0.0,)*8,
                   mean_label_len=9.0, len_spread=3.0, num_train=200, num_eval=32, seed=0,
                   length_noise_coupling=coupling),
        DomainSpec(task_id=1, vocab_size=V, symbol_distribution=MID, transition_bias=0.5,
                   feature_noise_sigma=0.20, feature_shift=tuple(P[1]-P[0]),
                   mean_label_len=6.0, len_spread=2.0, num_train=400, num_eval=32, seed=0,
                   length_noise_coupling=coupling),
        DomainSpec(task_id=2, vocab_size=V, symbol_distribution=HI,  transition_bias=0.7,
                   feature_noise_sigma=0.40, feature_shift=tuple(P[3]-P[5]),
                   mean_label_len=4.0, len_spread=1.5, num_train=600, num_eval=32, seed=0,
                   length_noise_coupling=coupling),
    ]

def one(job):
    seed, method, policy, frac, kdw, kdt, coupling = job
    cfg = default_config(seed=seed, epochs_per_stage=5)
    cfg = replace(cfg, domains=domains(coupling), method=method, selection_policy=policy,
                  memory_budget_frac=frac,
                  regularizer=RegularizerConfig(kd_weight=kdw, kd_temperature=kdt))
    rep = run_sequential(cfg, datasets=build_datasets(cfg))
    return job, rep.averaged_wer, float(rep.final_matrix[0,0]), float(rep.final_matrix[0,-1])

if __name__ == "__main__":
    which = sys.argv[1]
    jobs = []
    seeds = (1, 2, 3)
    if which == "kd":
        for s in seeds:
            jobs.append((s, "finetune", None, 0.0, 1.0, 2.0, 1.0))
            for w, t in itertools.product((0.5, 1.0, 1.5), (1.0, 2.0)):
                jobs.append((s, "kd", None, 0.0, w, t, 1.0))
    elif which == "len":
        for s in seeds:
            for c in (1.0, 2.5):
                jobs.append((s, "gem", "random", 0.05, 1.0, 2.0, c))
                jobs.append((s, "gem", "median_length", 0.05, 1.0, 2.0, c))
                jobs.append((s, "finetune", None, 0.0, 1.0, 2.0, c))
    t0 = time.time()
    with ProcessPoolExecutor(max_workers=4) as ex:
        for job, avg, t00, t0f in ex.map(one, jobs):
            s, method, policy, frac, kdw, kdt, c = job
            print(f"seed={s} {method:8s} pol={str(policy):13s} kdw={kdw} kdt={kdt} coup={c}: "
                  f"avg={avg:.3f} t0: {t00:.3f}->{t0f:.3f}", flush=True)
    print(f"total {time.time()-t0:.0f}s")
