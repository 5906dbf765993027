#include "recformer/csv.hpp"

#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

namespace recformer {

namespace {

[[noreturn]] void fail(const std::string& path, int line, const std::string& what) {
    throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

Matrix read_csv_matrix(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");

    std::vector<double> values;
    int rows = 0;
    int cols = -1;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        int count = 0;
        const char* p = line.c_str();
        while (true) {
            char* end = nullptr;
            errno = 0;
            double x = std::strtod(p, &end);
            if (end == p || errno == ERANGE)
                fail(path, lineno, std::string("non-numeric cell starting at '") +
                                       std::string(p).substr(0, 16) + "'");
            values.push_back(x);
            ++count;
            while (*end == ' ' || *end == '\t') ++end;
            if (*end == ',') {
                p = end + 1;
            } else if (*end == '\0') {
                break;
            } else {
                fail(path, lineno, std::string("unexpected character '") + *end + "'");
            }
        }
        if (cols < 0) {
            cols = count;
        } else if (count != cols) {
            fail(path, lineno,
                 "row has " + std::to_string(count) + " columns, expected " + std::to_string(cols));
        }
        ++rows;
    }
    if (rows == 0) throw ParseError(path + ": empty file");
    return Matrix(rows, cols, std::move(values));
}

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void write_csv_matrix(const std::string& path, const Matrix& m) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open file for writing");
    std::string line;
    for (int i = 0; i < m.rows; ++i) {
        line.clear();
        for (int j = 0; j < m.cols; ++j) {
            if (j) line += ',';
            line += format_double(m.at(i, j));
        }
        line += '\n';
        out << line;
    }
    if (!out) throw ParseError(path + ": write failed");
}

std::vector<int> read_csv_ints(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path + ": cannot open file");
    std::vector<int> out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        char* end = nullptr;
        errno = 0;
        long x = std::strtol(line.c_str(), &end, 10);
        while (end && (*end == ' ' || *end == '\t')) ++end;
        if (end == line.c_str() || (end && *end != '\0') || errno == ERANGE)
            fail(path, lineno, "expected a single integer, got '" + line + "'");
        out.push_back(static_cast<int>(x));
    }
    if (out.empty()) throw ParseError(path + ": empty file");
    return out;
}

void write_csv_ints(const std::string& path, const std::vector<int>& values) {
    std::ofstream out(path);
    if (!out) throw ParseError(path + ": cannot open file for writing");
    for (int x : values) out << x << '\n';
    if (!out) throw ParseError(path + ": write failed");
}

}  // namespace recformer
