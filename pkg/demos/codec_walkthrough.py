"""
Filling and reading relation tables by hand
===========================================

One sentence, one relation, six gold pairs.  Two of the objects are nested
("New York" inside "New York City"), which is what the reverse search route
of the decoder is for.
"""
from tablefill import EntitySpan, Label, Triple, decode_tables, encode_triples
from tablefill.codec import cell_count_baseline, cell_count_ours

tokens = "Edward Thomas and John are from New York City , USA .".split()
n = len(tokens)
LIVE_IN = 0

subjects = [EntitySpan(0, 1), EntitySpan(3, 3)]                    # Edward Thomas, John
objects = [EntitySpan(6, 8), EntitySpan(6, 7), EntitySpan(10, 10)]  # New York City, New York, USA
gold = [Triple(s, LIVE_IN, o) for s in subjects for o in objects]

table, conflicts = encode_triples(n, gold, 1)
print("conflicts:", len(conflicts))

# rows are subject tokens, columns object tokens; only non-empty rows shown
width = max(map(len, tokens))
print(" " * (width + 1) + " ".join(f"{t[:3]:>3}" for t in tokens))
for i, tok in enumerate(tokens):
    row = table.grid[0, i]
    if row.any():
        cells = " ".join(f"{Label(int(c)).text if c else '.':>3}" for c in row)
        print(f"{tok:>{width}} {cells}")


def show(triples):
    for t in triples:
        s = " ".join(tokens[t.subject.start:t.subject.end + 1])
        o = " ".join(tokens[t.object.start:t.object.end + 1])
        print(f"  ({s}, live_in, {o})")


print("decoded, all three routes:")
show(decode_tables(table))

# forward search alone stops at the first tail it meets, so the longer
# object of each nested pair is lost
print("decoded without reverse search:")
show(decode_tables(table, reverse_search=False))

# one n x n table per relation is still smaller than the triangular baseline
for n_, r in [(10, 3), (50, 24), (100, 171)]:
    print(f"n={n_:3d} |R|={r:3d}: {cell_count_ours(n_, r):>8d} cells vs {cell_count_baseline(n_, r):>8d}")
