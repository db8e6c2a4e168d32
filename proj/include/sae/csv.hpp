#ifndef SAE_CSV_HPP
#define SAE_CSV_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace sae::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;  // data rows, header excluded

    // Column index by name; -1 when absent.
    int column(const std::string& name) const;
};

Table read_file(const std::filesystem::path& path);

/// Shortest round-trippable decimal representation.
std::string format_double(double value);

/// Fixed-point with the given number of decimals.
std::string format_fixed(double value, int decimals);

double parse_double(const std::string& text, std::size_t row, const std::string& column);

}  // namespace sae::csv

#endif
