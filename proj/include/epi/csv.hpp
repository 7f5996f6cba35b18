#ifndef EPI_CSV_HPP
#define EPI_CSV_HPP

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

namespace epi {

/// Minimal CSV emitter with deterministic number formatting: doubles are
/// printed with %.17g so round-tripping and byte-level reproducibility hold.
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);

    CsvWriter& field(const std::string& s);
    CsvWriter& field(double x);
    CsvWriter& field(std::int64_t x);
    CsvWriter& field(int x) { return field(static_cast<std::int64_t>(x)); }
    void end_row();

private:
    std::ofstream out_;
    std::size_t columns_;
    std::size_t written_ = 0;
};

std::string format_double(double x);

} // namespace epi

#endif
