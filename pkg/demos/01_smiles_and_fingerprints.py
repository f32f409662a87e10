"""Parse SMILES strings into graphs and hash them into circular fingerprints.

Run: python3 demos/01_smiles_and_fingerprints.py
"""

from moltext.chem import compute_fingerprint, parse_smiles, tanimoto

# A molecular graph is atoms plus typed bonds; the parser handles branches,
# rings, aromatic atoms, and bracket atoms with charge or explicit hydrogens.
for smiles in ["CCO", "c1ccccc1", "CC(=O)Nc1ccc(O)cc1", "[NH4+]"]:
    graph = parse_smiles(smiles)
    print(f"{smiles:<22} atoms={len(graph.atoms):<3} bonds={len(graph.bonds)}")

# Fingerprints hash each atom's neighborhood at radii 0..r into a fixed-width
# bitset. Similar structures share bits; Tanimoto measures the overlap.
ethanol = compute_fingerprint(parse_smiles("CCO"), radius=2, nbits=2048)
propanol = compute_fingerprint(parse_smiles("CCCO"), radius=2, nbits=2048)
benzene = compute_fingerprint(parse_smiles("c1ccccc1"), radius=2, nbits=2048)

print(f"\nethanol sets {ethanol.popcount} bits, first few: {ethanol.bits()[:5]}")
print(f"tanimoto(ethanol, propanol) = {tanimoto(ethanol, propanol):.4f}")
print(f"tanimoto(ethanol, benzene)  = {tanimoto(ethanol, benzene):.4f}")

# Atom order never matters: the same molecule written differently gives the
# same bits.
a = compute_fingerprint(parse_smiles("OCC"), radius=2, nbits=2048)
print(f"\n'CCO' and 'OCC' produce identical fingerprints: {a == ethanol}")
