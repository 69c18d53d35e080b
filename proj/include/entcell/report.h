#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "entcell/util.h"
#include "json.hpp"

namespace entcell {

// CSV rows with round-trip float formatting so replayed runs are
// byte-identical.
class CsvWriter {
  public:
    explicit CsvWriter(const std::string & path) : out_(path, std::ios::binary) {
        if (!out_) throw data_error("cannot write csv: " + path);
    }
    void row(const std::vector<std::string> & fields) {
        for (size_t i = 0; i < fields.size(); ++i) {
            if (i) out_ << ",";
            out_ << fields[i];
        }
        out_ << "\n";
    }
    static std::string num(double v) { return fmt_g17(v); }
    static std::string num(int v) { return std::to_string(v); }
    static std::string num(long long v) { return std::to_string(v); }

  private:
    std::ofstream out_;
};

struct SvgSeries {
    std::string name;
    std::vector<double> y;
};

std::string svg_bar_chart(const std::string & title, const std::vector<std::string> & labels,
                          const std::vector<double> & values, const std::string & y_label);

std::string svg_line_chart(const std::string & title, const std::vector<double> & x,
                           const std::vector<SvgSeries> & series, const std::string & x_label,
                           const std::string & y_label);

// Side-by-side bars per label (e.g. before/after).
std::string svg_paired_bars(const std::string & title, const std::vector<std::string> & labels,
                            const std::vector<double> & first, const std::vector<double> & second,
                            const std::string & first_name, const std::string & second_name);

void write_text_file(const std::string & path, const std::string & content);

struct RunManifest {
    std::string command;
    std::string tool_version = "0.1.0";
    uint64_t seed = 0;
    nlohmann::json config_snapshot;
    std::string organism_fingerprint;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    std::string started_at, finished_at;
    double wall_clock_s = 0.0;
    std::string status = "running";

    nlohmann::json to_json() const;
};

std::string iso_timestamp_now();

// Written once before the run starts and rewritten with outputs and timing
// when it completes.
void write_manifest(const std::string & path, const RunManifest & manifest);

} // namespace entcell
