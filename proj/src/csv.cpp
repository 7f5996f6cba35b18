#include "epi/csv.hpp"

#include <cstdio>

#include "epi/errors.hpp"

namespace epi {

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path), columns_(header.size()) {
    if (!out_) throw Error(ErrorCode::VALIDATION, "cannot open output file " + path);
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out_ << ',';
        out_ << header[i];
    }
    out_ << '\n';
}

CsvWriter& CsvWriter::field(const std::string& s) {
    if (written_) out_ << ',';
    out_ << s;
    ++written_;
    return *this;
}

CsvWriter& CsvWriter::field(double x) { return field(format_double(x)); }

CsvWriter& CsvWriter::field(std::int64_t x) { return field(std::to_string(x)); }

void CsvWriter::end_row() {
    if (written_ != columns_)
        throw Error(ErrorCode::DIM_MISMATCH, "csv row width does not match header");
    out_ << '\n';
    written_ = 0;
}

} // namespace epi
