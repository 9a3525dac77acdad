"""How far does a single tampered token propagate?

With a full context every later inference reads the change; with an
anchored window of size w only the next w inferences can. The closed
form for the expected number of influenced positions is compared against
a Monte Carlo attack simulation on a real stegotext.
"""

from _common import get_model

from anchorstego import (
    ASW,
    AttackSpec,
    BridgeContext,
    SamplerConfig,
    StegoSession,
    WindowPolicy,
    embed,
    expected_influenced,
    simulate_attack,
)


def main():
    model = get_model()
    T = 120
    print(f"{'w':>4} {'m':>3} {'closed form':>12} {'simulated':>10} {'stderr':>8}")
    for w in (8, 24, 48):
        policy = WindowPolicy(kind=ASW, w=w, bridge=BridgeContext(tokens=tuple(b"~")))
        session = StegoSession(
            model=model, prompt=b"2:abcd", policy=policy,
            sampler=SamplerConfig(top_p=0.9), prng_seed=1, max_len=T,
            forbid_eos=True,
        )
        res = embed(session, [1, 0, 1, 1, 0, 0, 1, 0], fill_to_max=True)
        for m in (1, 3):
            report = simulate_attack(
                session, res.tokens, AttackSpec(kind="substitute", m=m, seed=m),
                trials=200,
            )
            print(f"{w:>4} {m:>3} {expected_influenced(T, m, w):>12.3f} "
                  f"{report.mc_influenced_mean:>10.3f} "
                  f"{report.mc_influenced_stderr:>8.3f}")
    print("\nsmaller windows localize damage; the closed form predicts the "
          "simulation within sampling noise.")


if __name__ == "__main__":
    main()
