"""6x11 monospace bitmap glyphs for printable ASCII.

Each entry is 11 rows, two hex digits per row; bit 5 is the leftmost
pixel.
"""

CELL_W = 6
CELL_H = 11

GLYPHS = {
    32: "0000000000000000000000",  # ' '
    33: "0000001818181800180000",  # '!'
    34: "0000001414140000000000",  # '"'
    35: "000014143e14143e141400",  # '#'
    36: "00081e323c1e06363c0800",  # '$'
    37: "0000382a3c081e2a0e0000",  # '%'
    38: "0000001c30183e2c3e0000",  # '&'
    39: "00000c0810000000000000",  # "'"
    40: "0000040818181818080400",  # '('
    41: "000010080c0c0c0c081000",  # ')'
    42: "0000083c18240000000000",  # '*'
    43: "00000008083e0808000000",  # '+'
    44: "00000000000000000c0810",  # ','
    45: "00000000003e0000000000",  # '-'
    46: "0000000000000000180000",  # '.'
    47: "0000020204040808101000",  # '/'
    48: "00001c36363636361c0000",  # '0'
    49: "00000c3c0c0c0c0c3f0000",  # '1'
    50: "00001c36060c18363e0000",  # '2'
    51: "00001c36061c06361c0000",  # '3'
    52: "0000060e16363f06060000",  # '4'
    53: "00003e303c3606263c0000",  # '5'
    54: "00001c36303c36361c0000",  # '6'
    55: "00003e36060c0c18180000",  # '7'
    56: "00001c36361c36361c0000",  # '8'
    57: "00001c36361e06361c0000",  # '9'
    58: "0000000000180000180000",  # ':'
    59: "0000000000180000181020",  # ';'
    60: "0000000c1830180c000000",  # '<'
    61: "000000003c003c00000000",  # '='
    62: "000000180c060c18000000",  # '>'
    63: "0000001c260c1800180000",  # '?'
    64: "00001c32262a2a27301c00",  # '@'
    65: "0000003c1c143e36370000",  # 'A'
    66: "0000003c363c36363c0000",  # 'B'
    67: "0000001e363030361c0000",  # 'C'
    68: "0000003c363636363c0000",  # 'D'
    69: "0000003e303c30363e0000",  # 'E'
    70: "0000003e303c3030380000",  # 'F'
    71: "0000001c36303e361e0000",  # 'G'
    72: "00000037363e3636370000",  # 'H'
    73: "0000003c181818183c0000",  # 'I'
    74: "0000001e0c0c2c2c380000",  # 'J'
    75: "0000003634383c363b0000",  # 'K'
    76: "00000038303030363e0000",  # 'L'
    77: "0000002236363e2a2a0000",  # 'M'
    78: "000000373a3a3636320000",  # 'N'
    79: "0000001c363636361c0000",  # 'O'
    80: "0000003c36363c30380000",  # 'P'
    81: "0000001c363636361c0600",  # 'Q'
    82: "0000003c36363c363b0000",  # 'R'
    83: "0000001e323c0e263c0000",  # 'S'
    84: "0000003e1a1818183c0000",  # 'T'
    85: "00000037363636361c0000",  # 'U'
    86: "0000003736141c1c080000",  # 'V'
    87: "0000002b2a2a3e1c140000",  # 'W'
    88: "000000331e0c0c1e330000",  # 'X'
    89: "00000033331e0c0c1e0000",  # 'Y'
    90: "0000003e360c18363e0000",  # 'Z'
    91: "00001c1818181818181c00",  # '['
    92: "0000202010100808040400",  # '\\'
    93: "00001c0c0c0c0c0c0c1c00",  # ']'
    94: "0000081c36000000000000",  # '^'
    95: "000000000000000000003f",  # '_'
    96: "0000180804000000000000",  # '`'
    97: "000000001c361e363f0000",  # 'a'
    98: "000030303c3636363c0000",  # 'b'
    99: "000000001c3630361c0000",  # 'c'
    100: "00000e061e3636361f0000",  # 'd'
    101: "000000001c363e301e0000",  # 'e'
    102: "00000e183e1818183e0000",  # 'f'
    103: "000000001b3636361e063c",  # 'g'
    104: "000030303c363636360000",  # 'h'
    105: "00000c003c0c0c0c3f0000",  # 'i'
    106: "00000c003c0c0c0c0c0c38",  # 'j'
    107: "00003030363c383c370000",  # 'k'
    108: "00003c0c0c0c0c0c3f0000",  # 'l'
    109: "000000003c3e2a2a2a0000",  # 'm'
    110: "000000002c363636360000",  # 'n'
    111: "000000001c3636361c0000",  # 'o'
    112: "000000003c3636363c3038",  # 'p'
    113: "000000001b3636361e060f",  # 'q'
    114: "00000000371d18183c0000",  # 'r'
    115: "000000001e381e073e0000",  # 's'
    116: "000018183e18181b0e0000",  # 't'
    117: "00000000363636361f0000",  # 'u'
    118: "0000000036361c1c080000",  # 'v'
    119: "000000002b2a3e1e140000",  # 'w'
    120: "000000003b1e0c1e370000",  # 'x'
    121: "00000000373636141c1830",  # 'y'
    122: "000000003e2c18363e0000",  # 'z'
    123: "0000060c0c180c0c0c0600",  # '{'
    124: "0000000808080808080800",  # '|'
    125: "00003018180c1818183000",  # '}'
    126: "000000001a2c0000000000",  # '~'
}

# hollow box, used for anything outside the table
REPLACEMENT = "00003f212121212121213f"
