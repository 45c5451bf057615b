"""Regenerates task_seed0_8x16.json from a standalone SplitMix64."""
import json
import math
import struct

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self):
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self):
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2)


def bits(x):
    return "%016x" % struct.unpack("<Q", struct.pack("<d", x))[0]


def main():
    seed, contexts, completions, scale = 0, 8, 16, 5.0
    rng = SplitMix64(seed)
    cells = contexts * completions
    reward = [rng.uniform() * scale for _ in range(cells)]
    logits = [rng.normal() for _ in range(cells)]
    doc = {
        "seed": seed,
        "n_contexts": contexts,
        "n_completions": completions,
        "reward_scale": scale,
        "reward_bits": [bits(v) for v in reward],
        "logit_bits": [bits(v) for v in logits],
    }
    with open("task_seed0_8x16.json", "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


if __name__ == "__main__":
    main()
