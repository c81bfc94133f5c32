#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sincere/errors.hpp"
#include "sincere/numeric.hpp"
#include "sincere/version.hpp"

namespace sincere {

/// Provenance record written next to every command's outputs. The run id
/// is a hash of (command, resolved config, artifact version), so re-runs
/// with identical inputs share it; the wall-clock duration lives only
/// here, keeping the reports themselves byte-reproducible.
struct RunManifest {
    std::string command;
    std::map<std::string, std::string> config;
    std::uint64_t seed = 0;
    std::string artifact_version = kArtifactVersion;
    std::vector<std::string> outputs;
    double duration_ms = 0.0;
    std::string run_id;

    static std::string compute_run_id(const std::string& command,
                                      const std::map<std::string, std::string>& config) {
        std::ostringstream blob;
        blob << command << '\n' << kArtifactVersion << '\n';
        // The output directory is where results land, not what the run
        // computes; identical experiments share a run id regardless of it.
        for (const auto& [k, v] : config)
            if (k != "out") blob << k << '=' << v << '\n';
        std::ostringstream hex;
        hex << std::hex << fnv1a(blob.str());
        return hex.str();
    }
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json j;
    j["command"] = m.command;
    j["config"] = m.config;
    j["seed"] = m.seed;
    j["artifact_version"] = m.artifact_version;
    j["outputs"] = m.outputs;
    j["duration_ms"] = m.duration_ms;
    j["run_id"] = m.run_id;
    return j;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open for writing: " + path.string());
    out << content;
    if (!out) throw io_error("write failed: " + path.string());
}

inline void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline nlohmann::json read_json_file(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw io_error("invalid JSON in " + path.string() + ": " + e.what());
    }
}

/// Fixed "%.17g" float formatting so CSV outputs round-trip exactly and
/// identical runs emit identical bytes.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

/// Embeddings with labels as CSV: a run-id comment, a header, then
/// id,label,c0..c{D-1} rows.
inline void write_embeddings_csv(const std::filesystem::path& path, const std::string& run_id,
                                 const Matrix& z, const std::vector<int>& labels) {
    if (z.rows() != labels.size())
        throw validation_error("write_embeddings_csv: label length mismatch");
    std::ostringstream out;
    out << "# run_id " << run_id << "\n";
    out << "id,label";
    for (std::size_t c = 0; c < z.cols(); ++c) out << ",c" << c;
    out << "\n";
    for (std::size_t i = 0; i < z.rows(); ++i) {
        out << i << ',' << labels[i];
        for (std::size_t c = 0; c < z.cols(); ++c) out << ',' << format_double(z(i, c));
        out << "\n";
    }
    write_text_file(path, out.str());
}

struct EmbeddingsFile {
    Matrix values;
    std::vector<int> labels;
    std::string run_id;
};

inline EmbeddingsFile read_embeddings_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    EmbeddingsFile file;
    std::vector<std::vector<double>> rows;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto pos = line.find("run_id ");
            if (pos != std::string::npos) file.run_id = line.substr(pos + 7);
            continue;
        }
        if (!header_seen) {
            header_seen = true; // "id,label,c0,..."
            continue;
        }
        std::istringstream cells(line);
        std::string cell;
        std::vector<std::string> parts;
        while (std::getline(cells, cell, ',')) parts.push_back(cell);
        if (parts.size() < 3) throw io_error("malformed embeddings row in " + path.string());
        file.labels.push_back(std::stoi(parts[1]));
        std::vector<double> row;
        for (std::size_t c = 2; c < parts.size(); ++c) row.push_back(std::stod(parts[c]));
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw io_error("no embedding rows in " + path.string());
    file.values = Matrix::from_rows(rows);
    return file;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::string& run_id,
                           const std::vector<double>& epoch_loss) {
    std::ostringstream out;
    out << "# run_id " << run_id << "\n";
    out << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < epoch_loss.size(); ++e)
        out << e << ',' << format_double(epoch_loss[e]) << "\n";
    write_text_file(path, out.str());
}

inline std::vector<double> read_loss_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    std::vector<double> losses;
    bool header_seen = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw io_error("malformed loss row in " + path.string());
        losses.push_back(std::stod(line.substr(comma + 1)));
    }
    if (losses.empty()) throw io_error("no loss rows in " + path.string());
    return losses;
}

} // namespace sincere
