"""Generate a small-molecule corpus over the C/N/O/F alphabet (<= 9 heavy atoms).

Molecules are random connected graphs that respect standard valences, sanitized
with RDKit and written as kekulized SMILES (no aromatic lowercase, no charges).

    python3 scripts/make_qm9_like.py --count 6000 --seed 7 --out data/qm9_like.smi
"""
import argparse
import random

from rdkit import Chem, RDLogger

RDLogger.DisableLog("rdApp.*")

SYMBOLS = ["C", "N", "O", "F"]
WEIGHTS = [0.70, 0.12, 0.16, 0.02]
VALENCE = {"C": 4, "N": 3, "O": 2, "F": 1}
SIZES = [(9, 0.80), (8, 0.12), (7, 0.05), (6, 0.02), (5, 0.01)]


def pick(rng, table):
    r = rng.random()
    acc = 0.0
    for value, w in table:
        acc += w
        if r < acc:
            return value
    return table[-1][0]


def random_molecule(rng):
    n = pick(rng, SIZES)
    atoms = ["C"] + rng.choices(SYMBOLS, WEIGHTS, k=n - 1)
    free = [VALENCE[a] for a in atoms]
    bonds = {}
    for i in range(1, n):
        if free[i] < 1:
            return None
        cands = [j for j in range(i) if free[j] >= 1]
        if not cands:
            return None
        j = rng.choice(cands)
        bonds[(j, i)] = 1
        free[i] -= 1
        free[j] -= 1
    for _ in range(rng.choice([0, 0, 1, 1, 1, 2, 3])):
        pairs = [
            (a, b)
            for a in range(n)
            for b in range(a + 1, n)
            if (a, b) not in bonds and free[a] >= 1 and free[b] >= 1
        ]
        if not pairs:
            break
        a, b = rng.choice(pairs)
        bonds[(a, b)] = 1
        free[a] -= 1
        free[b] -= 1
    for (a, b) in list(bonds):
        if free[a] >= 1 and free[b] >= 1 and rng.random() < 0.18:
            order = 2
            if free[a] >= 2 and free[b] >= 2 and rng.random() < 0.25:
                order = 3
            bonds[(a, b)] = order
            free[a] -= order - 1
            free[b] -= order - 1
    mol = Chem.RWMol()
    for a in atoms:
        mol.AddAtom(Chem.Atom(a))
    kinds = {1: Chem.BondType.SINGLE, 2: Chem.BondType.DOUBLE, 3: Chem.BondType.TRIPLE}
    for (a, b), order in bonds.items():
        mol.AddBond(a, b, kinds[order])
    try:
        m = mol.GetMol()
        Chem.SanitizeMol(m)
    except Exception:
        return None
    ri = m.GetRingInfo()
    if any(len(r) > 7 for r in ri.AtomRings()) or ri.NumRings() > 3:
        return None
    # reject small strained rings carrying multiple bonds
    for ring in ri.BondRings():
        if len(ring) <= 4 and any(
            m.GetBondWithIdx(b).GetBondType() != Chem.BondType.SINGLE for b in ring
        ):
            return None
    Chem.Kekulize(m, clearAromaticFlags=True)
    smi = Chem.MolToSmiles(m, kekuleSmiles=True)
    if any(ch.islower() for ch in smi) or "+" in smi or "-]" in smi:
        return None
    return smi


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--count", type=int, default=6000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="data/qm9_like.smi")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    seen = set()
    out = []
    while len(out) < args.count:
        smi = random_molecule(rng)
        if smi is None or smi in seen:
            continue
        seen.add(smi)
        out.append(smi)
    with open(args.out, "w") as f:
        f.write("smiles\n")
        for s in out:
            f.write(s + "\n")


if __name__ == "__main__":
    main()
