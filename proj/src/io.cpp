#include "skrr/io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

namespace skrr {

static_assert(std::endian::native == std::endian::little, "package blobs are written in host order");

namespace {

using nlohmann::json;

constexpr std::string_view kMagic = "SKRRPKG1";
constexpr std::size_t kAlign = 8;

std::size_t align_up(std::size_t n) { return (n + kAlign - 1) / kAlign * kAlign; }

json config_to_json(const EncoderConfig& c)
{
    json kinds = json::array();
    for (int j = 0; j < c.num_sub_blocks(); ++j) {
        kinds.push_back(to_string(c.kind(j)));
    }
    return json{{"num_blocks", c.num_blocks}, {"d_model", c.d_model},     {"n_heads", c.n_heads},
                {"d_ff", c.d_ff},             {"d_cond", c.d_cond},       {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len}, {"norm_eps", c.norm_eps}, {"block_kind", kinds}};
}

EncoderConfig config_from_json(const json& j)
{
    EncoderConfig c;
    c.num_blocks = j.at("num_blocks").get<int>();
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.d_cond = j.at("d_cond").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.norm_eps = j.at("norm_eps").get<float>();
    const auto kinds = j.at("block_kind").get<std::vector<std::string>>();
    if (static_cast<int>(kinds.size()) != c.num_sub_blocks()) {
        throw FormatError("block_kind has " + std::to_string(kinds.size()) + " entries, expected "
                          + std::to_string(c.num_sub_blocks()));
    }
    c.linear_stack = !kinds.empty() && parse_sub_block_kind(kinds.front()) == SubBlockKind::Linear;
    for (int s = 0; s < c.num_sub_blocks(); ++s) {
        if (parse_sub_block_kind(kinds[static_cast<std::size_t>(s)]) != c.kind(s)) {
            throw FormatError("block_kind layout must be MHA/FFN by parity or all LINEAR");
        }
    }
    return c;
}

struct NamedTensor {
    std::string name;
    const Matrix* tensor;
};

std::vector<NamedTensor> package_tensors(const ModelPackage& pkg)
{
    std::vector<NamedTensor> out{{"embedding", &pkg.embedding}};
    for (std::size_t j = 0; j < pkg.sub_blocks.size(); ++j) {
        for (const auto& [name, t] : pkg.sub_blocks[j].tensors()) {
            out.push_back({"sub_blocks." + std::to_string(j) + "." + name, t});
        }
    }
    out.push_back({"final_gain", &pkg.final_gain});
    out.push_back({"projection", &pkg.projection});
    return out;
}

} // namespace

std::string serialize_package(const ModelPackage& pkg)
{
    pkg.validate();
    json tensors = json::array();
    std::string blob;
    for (const auto& [name, t] : package_tensors(pkg)) {
        blob.resize(align_up(blob.size()), '\0');
        tensors.push_back({{"name", name}, {"shape", {t->rows(), t->cols()}}, {"offset", blob.size()}});
        const auto bytes = static_cast<std::size_t>(t->size()) * sizeof(float);
        const std::size_t at = blob.size();
        blob.resize(at + bytes);
        std::memcpy(blob.data() + at, t->data(), bytes);
    }
    json redundancy = json::array();
    for (const auto& r : pkg.redundancy) {
        redundancy.push_back(
            {{"sub_block", r.sub_block}, {"mode", to_string(r.mode)}, {"epsilon", r.epsilon}, {"other", r.other}});
    }
    const json header{{"format_version", pkg.format_version},
                      {"config", config_to_json(pkg.config)},
                      {"seed", pkg.seed},
                      {"null_tokens", pkg.null_tokens},
                      {"redundancy", redundancy},
                      {"tensors", tensors},
                      {"blob_bytes", blob.size()}};
    const std::string text = header.dump();

    std::string out(kMagic);
    std::uint64_t len = text.size();
    out.append(reinterpret_cast<const char*>(&len), sizeof(len));
    out += text;
    out.resize(align_up(out.size()), '\0');
    out += blob;
    return out;
}

ModelPackage deserialize_package(std::string_view bytes)
{
    if (bytes.size() < kMagic.size() + 8 || bytes.substr(0, kMagic.size()) != kMagic) {
        throw FormatError("not a model package (bad magic)");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + kMagic.size(), sizeof(len));
    const std::size_t header_at = kMagic.size() + sizeof(len);
    if (len > bytes.size() - header_at) {
        throw FormatError("truncated package header");
    }
    json header;
    try {
        header = json::parse(bytes.substr(header_at, len));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed package header: ") + e.what());
    }
    const std::size_t blob_at = align_up(header_at + len);
    const std::string_view blob = bytes.size() >= blob_at ? bytes.substr(blob_at) : std::string_view{};

    ModelPackage pkg;
    try {
        pkg.format_version = header.at("format_version").get<int>();
        if (pkg.format_version != ModelPackage::kFormatVersion) {
            throw FormatError("unsupported package format_version " + std::to_string(pkg.format_version));
        }
        pkg.config = config_from_json(header.at("config"));
        pkg.config.validate();
        pkg.seed = header.at("seed").get<std::uint64_t>();
        pkg.null_tokens = header.at("null_tokens").get<std::vector<int>>();
        for (const auto& r : header.at("redundancy")) {
            pkg.redundancy.push_back({r.at("sub_block").get<int>(), parse_redundancy_mode(r.at("mode").get<std::string>()),
                                      r.at("epsilon").get<double>(), r.at("other").get<int>()});
        }
        pkg.sub_blocks.resize(static_cast<std::size_t>(pkg.config.num_sub_blocks()));
        for (int j = 0; j < pkg.config.num_sub_blocks(); ++j) {
            pkg.sub_blocks[static_cast<std::size_t>(j)].kind = pkg.config.kind(j);
        }

        // Destination for each expected tensor name.
        std::vector<std::pair<std::string, Matrix*>> slots{{"embedding", &pkg.embedding}};
        for (std::size_t j = 0; j < pkg.sub_blocks.size(); ++j) {
            for (auto& [name, t] : pkg.sub_blocks[j].tensors()) {
                slots.emplace_back("sub_blocks." + std::to_string(j) + "." + name, t);
            }
        }
        slots.emplace_back("final_gain", &pkg.final_gain);
        slots.emplace_back("projection", &pkg.projection);

        const auto& dir = header.at("tensors");
        if (dir.size() != slots.size()) {
            throw FormatError("tensor directory has " + std::to_string(dir.size()) + " entries, expected "
                              + std::to_string(slots.size()));
        }
        for (std::size_t i = 0; i < slots.size(); ++i) {
            const auto& entry = dir[i];
            if (entry.at("name").get<std::string>() != slots[i].first) {
                throw FormatError("tensor " + std::to_string(i) + " is '" + entry.at("name").get<std::string>()
                                  + "', expected '" + slots[i].first + "'");
            }
            const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
            const auto offset = entry.at("offset").get<std::size_t>();
            if (shape.size() != 2 || shape[0] < 0 || shape[1] < 0) {
                throw FormatError("tensor '" + slots[i].first + "' has a bad shape");
            }
            if (offset % kAlign != 0) {
                throw FormatError("tensor '" + slots[i].first + "' offset is not 8-byte aligned");
            }
            const std::size_t nbytes = static_cast<std::size_t>(shape[0] * shape[1]) * sizeof(float);
            if (offset > blob.size() || nbytes > blob.size() - offset) {
                throw FormatError("tensor '" + slots[i].first + "' extends past the blob");
            }
            Matrix& m = *slots[i].second;
            m.resize(shape[0], shape[1]);
            std::memcpy(m.data(), blob.data() + offset, nbytes);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed package header: ") + e.what());
    }
    try {
        pkg.validate();
    } catch (const InvalidModel& e) {
        throw FormatError(std::string("inconsistent package: ") + e.what());
    }
    return pkg;
}

std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes)
{
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error("cannot write '" + path.string() + "'");
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void save_package(const ModelPackage& pkg, const std::filesystem::path& path)
{
    write_file(path, serialize_package(pkg));
}

ModelPackage load_package(const std::filesystem::path& path)
{
    return deserialize_package(read_file(path));
}

CalibrationSet generate_calibration(const EncoderConfig& config, std::uint64_t seed, int count, int min_len,
                                    int max_len)
{
    if (max_len <= 0) {
        max_len = config.max_seq_len;
    }
    min_len = std::clamp(min_len, 1, config.max_seq_len);
    max_len = std::clamp(max_len, min_len, config.max_seq_len);
    if (config.vocab_size < 2) {
        throw Error("calibration needs at least one non-null token id");
    }
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> len_dist(min_len, max_len);
    std::uniform_int_distribution<int> tok_dist(1, config.vocab_size - 1);
    CalibrationSet calib;
    for (int s = 0; s < count; ++s) {
        std::vector<int> seq(static_cast<std::size_t>(len_dist(rng)));
        for (auto& t : seq) {
            t = tok_dist(rng);
        }
        calib.sequences.push_back(std::move(seq));
    }
    return calib;
}

void validate_calibration(const EncoderConfig& config, const CalibrationSet& calib)
{
    if (calib.empty()) {
        throw Error("calibration set is empty");
    }
    for (std::size_t s = 0; s < calib.sequences.size(); ++s) {
        const auto& seq = calib.sequences[s];
        if (seq.empty() || static_cast<int>(seq.size()) > config.max_seq_len) {
            throw Error("calibration sequence " + std::to_string(s) + " has length " + std::to_string(seq.size())
                        + ", expected 1.." + std::to_string(config.max_seq_len));
        }
        for (int t : seq) {
            if (t < 0 || t >= config.vocab_size) {
                throw Error("calibration sequence " + std::to_string(s) + " has unknown token id " + std::to_string(t));
            }
        }
    }
}

CalibrationSet parse_calibration(std::istream& in)
{
    CalibrationSet calib;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) {
            continue;
        }
        try {
            calib.sequences.push_back(nlohmann::json::parse(line).get<std::vector<int>>());
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("calibration line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return calib;
}

void write_calibration(std::ostream& out, const CalibrationSet& calib)
{
    for (const auto& seq : calib.sequences) {
        out << nlohmann::json(seq).dump() << '\n';
    }
}

CalibrationSet load_calibration(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open calibration file '" + path.string() + "'");
    }
    return parse_calibration(in);
}

void save_calibration(const CalibrationSet& calib, const std::filesystem::path& path)
{
    std::ostringstream ss;
    write_calibration(ss, calib);
    write_file(path, ss.str());
}

} // namespace skrr
