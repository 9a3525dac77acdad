"""Hide a message in generated text and recover it.

The embedder decodes the framed secret bits against each step's quantized
next-token distribution to pick tokens; the extractor replays the same
windows and re-encodes the observed tokens back into bits. Both sides
share only the model checkpoint and the session parameters.
"""

from _common import get_model

from anchorstego import (
    ASW,
    BridgeContext,
    SamplerConfig,
    StegoSession,
    WindowPolicy,
    bits_to_bytes,
    bytes_to_bits,
    embed,
    extract,
)


def main():
    model = get_model()
    policy = WindowPolicy(kind=ASW, w=8, bridge=BridgeContext(tokens=tuple(b"~")))
    session = StegoSession(
        model=model,
        prompt=b"1:abcd",
        policy=policy,
        sampler=SamplerConfig(top_p=0.9),
        prng_seed=7,
        max_len=512,
        forbid_eos=True,
    )

    secret = b"meet at the north gate at dawn"
    result = embed(session, bytes_to_bits(secret))
    print(f"stegotext ({len(result.tokens)} tokens, "
          f"{result.capacity:.2f} bits/token):")
    print(f"  {result.stegotext.decode()}")

    recovered = extract(session, result.stegotext)
    message = bits_to_bytes(recovered.payload_bits)
    print(f"recovered: {message.decode()}")
    assert message == secret
    print("round trip OK")


if __name__ == "__main__":
    main()
