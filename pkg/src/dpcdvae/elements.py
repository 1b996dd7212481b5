"""Static element data: symbols, standard atomic masses (amu), and common
oxidation states used by the composition-neutrality check.

Masses follow the conventional standard atomic weights; elements without
a stable isotope carry the mass number of their most stable isotope.
Oxidation states list the states in common inorganic use per element; an
element absent from the table (or with an empty tuple and a nonzero
charge requirement) simply fails the neutrality search, which callers
report as an invalid composition.
"""

from __future__ import annotations

AMU_TO_GRAM = 1.66053906660e-24

SYMBOLS = (
    "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne",
    "Na", "Mg", "Al", "Si", "P", "S", "Cl", "Ar", "K", "Ca",
    "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr",
    "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd", "In", "Sn",
    "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb",
    "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U", "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm",
    "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds",
    "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
)

ATOMIC_MASSES = (
    1.008, 4.002602, 6.94, 9.0121831, 10.81, 12.011, 14.007, 15.999,
    18.998403163, 20.1797, 22.98976928, 24.305, 26.9815385, 28.085,
    30.973761998, 32.06, 35.45, 39.948, 39.0983, 40.078, 44.955908,
    47.867, 50.9415, 51.9961, 54.938044, 55.845, 58.933194, 58.6934,
    63.546, 65.38, 69.723, 72.630, 74.921595, 78.971, 79.904, 83.798,
    85.4678, 87.62, 88.90584, 91.224, 92.90637, 95.95, 98.0, 101.07,
    102.90550, 106.42, 107.8682, 112.414, 114.818, 118.710, 121.760,
    127.60, 126.90447, 131.293, 132.90545196, 137.327, 138.90547,
    140.116, 140.90766, 144.242, 145.0, 150.36, 151.964, 157.25,
    158.92535, 162.500, 164.93033, 167.259, 168.93422, 173.045,
    174.9668, 178.49, 180.94788, 183.84, 186.207, 190.23, 192.217,
    195.084, 196.966569, 200.592, 204.38, 207.2, 208.98040, 209.0,
    210.0, 222.0, 223.0, 226.0, 227.0, 232.0377, 231.03588, 238.02891,
    237.0, 244.0, 243.0, 247.0, 247.0, 251.0, 252.0, 257.0, 258.0,
    259.0, 262.0, 267.0, 268.0, 271.0, 272.0, 270.0, 276.0, 281.0,
    280.0, 285.0, 284.0, 289.0, 288.0, 293.0, 294.0, 294.0,
)

# Common oxidation states; noble gases and superheavies stay empty.
COMMON_OXIDATION_STATES: dict[str, tuple[int, ...]] = {
    "H": (-1, 1), "He": (), "Li": (1,), "Be": (2,), "B": (3,),
    "C": (-4, -2, 2, 4), "N": (-3, -2, -1, 3, 5), "O": (-2, -1),
    "F": (-1,), "Ne": (), "Na": (1,), "Mg": (2,), "Al": (3,),
    "Si": (-4, 4), "P": (-3, 3, 5), "S": (-2, 2, 4, 6),
    "Cl": (-1, 1, 3, 5, 7), "Ar": (), "K": (1,), "Ca": (2,),
    "Sc": (3,), "Ti": (2, 3, 4), "V": (2, 3, 4, 5), "Cr": (2, 3, 6),
    "Mn": (2, 3, 4, 6, 7), "Fe": (2, 3), "Co": (2, 3), "Ni": (2, 3),
    "Cu": (1, 2), "Zn": (2,), "Ga": (3,), "Ge": (-4, 2, 4),
    "As": (-3, 3, 5), "Se": (-2, 2, 4, 6), "Br": (-1, 1, 3, 5),
    "Kr": (2,), "Rb": (1,), "Sr": (2,), "Y": (3,), "Zr": (4,),
    "Nb": (3, 5), "Mo": (2, 3, 4, 6), "Tc": (4, 7), "Ru": (2, 3, 4),
    "Rh": (3,), "Pd": (2, 4), "Ag": (1,), "Cd": (2,), "In": (1, 3),
    "Sn": (-4, 2, 4), "Sb": (-3, 3, 5), "Te": (-2, 2, 4, 6),
    "I": (-1, 1, 3, 5, 7), "Xe": (2, 4, 6), "Cs": (1,), "Ba": (2,),
    "La": (3,), "Ce": (3, 4), "Pr": (3,), "Nd": (3,), "Pm": (3,),
    "Sm": (2, 3), "Eu": (2, 3), "Gd": (3,), "Tb": (3, 4), "Dy": (3,),
    "Ho": (3,), "Er": (3,), "Tm": (2, 3), "Yb": (2, 3), "Lu": (3,),
    "Hf": (4,), "Ta": (3, 5), "W": (2, 4, 6), "Re": (3, 4, 7),
    "Os": (3, 4), "Ir": (3, 4), "Pt": (2, 4), "Au": (1, 3),
    "Hg": (1, 2), "Tl": (1, 3), "Pb": (2, 4), "Bi": (3, 5),
    "Po": (-2, 2, 4), "At": (-1, 1), "Rn": (2,), "Fr": (1,),
    "Ra": (2,), "Ac": (3,), "Th": (4,), "Pa": (4, 5), "U": (3, 4, 5, 6),
    "Np": (3, 4, 5, 6), "Pu": (3, 4, 5, 6), "Am": (3,), "Cm": (3,),
    "Bk": (3,), "Cf": (3,), "Es": (3,), "Fm": (3,), "Md": (3,),
    "No": (2,), "Lr": (3,),
}

_NUMBER_FOR_SYMBOL = {s: i + 1 for i, s in enumerate(SYMBOLS)}

MAX_ATOMIC_NUMBER = len(SYMBOLS)


def symbol_for(z: int) -> str:
    if not 1 <= int(z) <= MAX_ATOMIC_NUMBER:
        raise ValueError(f"atomic number {z} outside [1, {MAX_ATOMIC_NUMBER}]")
    return SYMBOLS[int(z) - 1]


def number_for(symbol: str) -> int:
    try:
        return _NUMBER_FOR_SYMBOL[symbol]
    except KeyError:
        raise ValueError(f"unknown element symbol {symbol!r}") from None


def mass_for(z: int) -> float:
    if not 1 <= int(z) <= MAX_ATOMIC_NUMBER:
        raise ValueError(f"atomic number {z} outside [1, {MAX_ATOMIC_NUMBER}]")
    return ATOMIC_MASSES[int(z) - 1]


def oxidation_states_for(z: int) -> tuple[int, ...] | None:
    """Common oxidation states for element ``z``; None when untabulated."""
    return COMMON_OXIDATION_STATES.get(symbol_for(z))
