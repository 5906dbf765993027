#pragma once

#include <string>
#include <vector>

#include "recformer/matrix.hpp"

namespace recformer {

// Reads a headerless CSV of decimal floats. Every row must have the same
// column count. Throws ParseError with file and line on bad input.
Matrix read_csv_matrix(const std::string& path);

// Writes with "%.17g" so values round-trip bit-exactly.
void write_csv_matrix(const std::string& path, const Matrix& m);

// One integer per line.
std::vector<int> read_csv_ints(const std::string& path);
void write_csv_ints(const std::string& path, const std::vector<int>& values);

std::string format_double(double x);

}  // namespace recformer
