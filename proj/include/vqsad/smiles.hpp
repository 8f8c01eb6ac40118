#pragma once

#include <string>

#include "vqsad/graph.hpp"

namespace vqsad {

// Subset grammar: element symbols from the vocabulary, bonds - = #, branches
// via parentheses, ring closures with digits 1-9 (digits are reusable after a
// ring closes). Charges, stereo markers, brackets and aromatic lowercase
// atoms are rejected with a ParseError carrying the byte offset.
MolecularGraph parse_smiles(const std::string& s, const AtomVocabulary& vocab);

// Saturate remaining valence with explicit hydrogen atoms. Requires H in the
// vocabulary; atoms already at capacity are left alone.
MolecularGraph add_explicit_hydrogens(const MolecularGraph& g, const AtomVocabulary& vocab);

// Inverse of parse up to isomorphism: parse_smiles(write_smiles(g)) has the
// same canonical hash as g. Requires a connected graph.
std::string write_smiles(const MolecularGraph& g, const AtomVocabulary& vocab);

}  // namespace vqsad
