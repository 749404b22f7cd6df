#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "bh/error.hpp"
#include "bh/flow.hpp"
#include "bh/harmonize.hpp"
#include "bh/image.hpp"
#include "bh/train.hpp"

namespace bh {

// ---------------------------------------------------------------------------
// byte-level helpers (everything on disk is little-endian)
// ---------------------------------------------------------------------------

namespace iodet {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, 8);
    put_u64(out, bits);
}

// Sequential reader with offset-aware truncation errors.
struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw IoError(std::string("unexpected end of file at byte ") +
                          std::to_string(buf.size()) + " while reading " + what);
        }
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        }
        pos += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        }
        pos += 8;
        return v;
    }
    double f64(const char* what) {
        std::uint64_t bits = u64(what);
        double d;
        std::memcpy(&d, &bits, 8);
        return d;
    }
};

// CRC-32 (IEEE 802.3, reflected polynomial 0xEDB88320).
inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (std::size_t i = 0; i < n; ++i) {
        crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    }
    return crc ^ 0xFFFFFFFFu;
}

inline std::uint32_t crc32(const std::string& s) {
    return crc32(reinterpret_cast<const unsigned char*>(s.data()), s.size());
}

inline std::string slurp(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return buf;
}

// Exclusive write with atomic rename-into-place.
inline void spit(const std::filesystem::path& path, const std::string& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void check_dims(std::uint32_t h, std::uint32_t w) {
    if (h == 0 || w == 0 || h > 65536 || w > 65536 ||
        static_cast<std::uint64_t>(h) * w > 100000000ull) {
        throw IoError("image dimension overflow: " + std::to_string(h) + "x" +
                      std::to_string(w));
    }
}

} // namespace iodet

// ---------------------------------------------------------------------------
// image files: raw float "BHIMG01" and 16-bit binary PGM (P5, maxval 65535)
// ---------------------------------------------------------------------------

inline constexpr char kImageMagic[] = "BHIMG01";

inline std::string encode_image_float(const ImageGrid& img) {
    std::string out(kImageMagic, 7);
    iodet::put_u32(out, static_cast<std::uint32_t>(img.height));
    iodet::put_u32(out, static_cast<std::uint32_t>(img.width));
    for (double v : img.data) iodet::put_f64(out, v);
    return out;
}

inline std::string encode_image_pgm(const ImageGrid& img) {
    std::string out = "P5\n" + std::to_string(img.width) + " " +
                      std::to_string(img.height) + "\n65535\n";
    for (double v : img.data) {
        double c = std::clamp(v, 0.0, 1.0);
        auto q = static_cast<std::uint32_t>(c * 65535.0 + 0.5);
        if (q > 65535) q = 65535;
        out.push_back(static_cast<char>((q >> 8) & 0xff)); // big-endian per PGM
        out.push_back(static_cast<char>(q & 0xff));
    }
    return out;
}

namespace iodet {

inline ImageGrid decode_image_float(const std::string& buf) {
    Reader r{buf, 7};
    std::uint32_t h = r.u32("height");
    std::uint32_t w = r.u32("width");
    check_dims(h, w);
    ImageGrid img(static_cast<int>(h), static_cast<int>(w));
    for (double& v : img.data) v = r.f64("pixel data");
    return img;
}

inline ImageGrid decode_image_pgm(const std::string& buf) {
    Reader r{buf, 0};
    auto token = [&]() -> std::string {
        for (;;) {
            r.need(1, "PGM header");
            char c = buf[r.pos];
            if (c == '#') {
                while (r.pos < buf.size() && buf[r.pos] != '\n') ++r.pos;
            } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
                ++r.pos;
            } else {
                break;
            }
        }
        std::string t;
        while (r.pos < buf.size() && !std::isspace(static_cast<unsigned char>(buf[r.pos]))) {
            t.push_back(buf[r.pos++]);
        }
        return t;
    };
    auto number = [&](const char* what) -> std::uint32_t {
        std::string t = token();
        if (t.empty() || t.find_first_not_of("0123456789") != std::string::npos) {
            throw IoError(std::string("bad PGM ") + what + ": '" + t + "'");
        }
        unsigned long long v = std::stoull(t);
        if (v > 0xffffffffull) throw IoError(std::string("PGM ") + what + " overflow");
        return static_cast<std::uint32_t>(v);
    };
    if (token() != "P5") throw IoError("bad PGM magic (want P5)");
    std::uint32_t w = number("width");
    std::uint32_t h = number("height");
    std::uint32_t maxval = number("maxval");
    if (maxval != 65535) {
        throw IoError("unsupported PGM maxval " + std::to_string(maxval) + " (want 65535)");
    }
    check_dims(h, w);
    r.u8("raster separator"); // single whitespace byte after maxval
    ImageGrid img(static_cast<int>(h), static_cast<int>(w));
    for (double& v : img.data) {
        std::uint32_t hi = r.u8("pixel data");
        std::uint32_t lo = r.u8("pixel data");
        v = static_cast<double>((hi << 8) | lo) / 65535.0;
    }
    return img;
}

} // namespace iodet

// Format is sniffed from the leading bytes: "P5" or "BHIMG01".
inline ImageGrid read_image(const std::filesystem::path& path) {
    std::string buf = iodet::slurp(path);
    if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == '5') {
        return iodet::decode_image_pgm(buf);
    }
    if (buf.size() >= 7 && std::memcmp(buf.data(), kImageMagic, 7) == 0) {
        return iodet::decode_image_float(buf);
    }
    throw IoError("unrecognized image magic in " + path.string());
}

// ".pgm" writes 16-bit PGM (lossy within 1/65535); everything else writes
// the lossless float format.
inline void write_image(const std::filesystem::path& path, const ImageGrid& img) {
    require_finite(img, "write_image");
    if (path.extension() == ".pgm") {
        iodet::spit(path, encode_image_pgm(img));
    } else {
        iodet::spit(path, encode_image_float(img));
    }
}

// ---------------------------------------------------------------------------
// dataset directory
// ---------------------------------------------------------------------------

// Lexicographic ingestion of *.pgm / *.bhimg; each image min-max normalized
// on load; uniform dimensions enforced.
inline TargetDataset load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw IoError("dataset directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension();
        if (ext == ".pgm" || ext == ".bhimg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
    if (files.empty()) {
        throw IoError("dataset directory has no .pgm/.bhimg images: " + dir.string());
    }
    std::vector<ImageGrid> images;
    images.reserve(files.size());
    for (const auto& f : files) {
        ImageGrid img = read_image(f);
        if (!images.empty() && !img.same_shape(images.front())) {
            throw IoError("dimension conflict: " + files.front().filename().string() + " is " +
                          std::to_string(images.front().height) + "x" +
                          std::to_string(images.front().width) + " but " +
                          f.filename().string() + " is " + std::to_string(img.height) + "x" +
                          std::to_string(img.width));
        }
        images.push_back(minmax_normalize(img));
    }
    return make_dataset(std::move(images));
}

inline std::vector<std::filesystem::path> list_dataset_files(
    const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension();
        if (ext == ".pgm" || ext == ".bhimg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename() < b.filename(); });
    return files;
}

// ---------------------------------------------------------------------------
// checkpoints: "BHFLOW01" + arch + params + CRC-32
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "BHFLOW01";

inline std::string encode_checkpoint(const FlowModel& model) {
    if (model.identity_mixing_permutation) {
        throw IoError("identity-permutation flow models are in-memory constructions "
                      "and cannot be persisted");
    }
    std::string out(kCheckpointMagic, 8);
    iodet::put_u32(out, static_cast<std::uint32_t>(model.arch.levels));
    iodet::put_u32(out, static_cast<std::uint32_t>(model.arch.steps_per_level));
    iodet::put_u32(out, static_cast<std::uint32_t>(model.arch.coupling_hidden_width));
    iodet::put_u32(out, static_cast<std::uint32_t>(model.arch.coupling_hidden_layers));
    iodet::put_u32(out, static_cast<std::uint32_t>(model.arch.input_height));
    iodet::put_u32(out, static_cast<std::uint32_t>(model.arch.input_width));
    iodet::put_u32(out, model.actnorm_initialized ? 1u : 0u);
    iodet::put_u64(out, static_cast<std::uint64_t>(model.params.size()));
    for (double p : model.params) iodet::put_f64(out, p);
    iodet::put_u32(out, iodet::crc32(out));
    return out;
}

inline FlowModel decode_checkpoint(const std::string& buf) {
    if (buf.size() < 8 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) {
        std::string got = buf.substr(0, std::min<std::size_t>(buf.size(), 8));
        throw IoError("checkpoint version/magic mismatch (got '" + got + "', want '" +
                      kCheckpointMagic + "')");
    }
    if (buf.size() < 4) throw IoError("checkpoint truncated");
    std::uint32_t stored = 0;
    for (int i = 0; i < 4; ++i) {
        stored |= static_cast<std::uint32_t>(
                      static_cast<std::uint8_t>(buf[buf.size() - 4 + i]))
                  << (8 * i);
    }
    std::uint32_t actual = iodet::crc32(
        reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
    if (stored != actual) {
        throw IoError("checkpoint CRC mismatch: file is corrupted");
    }
    iodet::Reader r{buf, 8};
    FlowModel m;
    m.arch.levels = static_cast<int>(r.u32("levels"));
    m.arch.steps_per_level = static_cast<int>(r.u32("steps_per_level"));
    m.arch.coupling_hidden_width = static_cast<int>(r.u32("coupling_hidden_width"));
    m.arch.coupling_hidden_layers = static_cast<int>(r.u32("coupling_hidden_layers"));
    m.arch.input_height = static_cast<int>(r.u32("input_height"));
    m.arch.input_width = static_cast<int>(r.u32("input_width"));
    m.actnorm_initialized = r.u32("actnorm flag") != 0;
    try {
        m.arch.validate();
    } catch (const ConfigError& e) {
        throw IoError(std::string("checkpoint carries an invalid architecture: ") + e.what());
    }
    m.layout = flowdet::build_layout(m.arch);
    std::uint64_t count = r.u64("parameter count");
    if (count != m.layout.total) {
        throw IoError("checkpoint parameter count " + std::to_string(count) +
                      " does not match architecture-derived count " +
                      std::to_string(m.layout.total));
    }
    m.params.resize(count);
    for (double& p : m.params) p = r.f64("parameters");
    return m;
}

inline void save_checkpoint(const FlowModel& model, const std::filesystem::path& path) {
    iodet::spit(path, encode_checkpoint(model));
}

inline FlowModel load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(iodet::slurp(path));
}

// ---------------------------------------------------------------------------
// run configuration: line-oriented "key = value" with '#' comments
// ---------------------------------------------------------------------------

struct RunConfig {
    FlowArchitecture arch;
    TrainConfig train;
    HarmonizeConfig harmonize;
    std::string data_dir;
    std::set<std::string> present; // keys that appeared in the file
};

namespace iodet {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
        d = std::stod(v, &used);
    } catch (...) {
        throw ConfigError("config key '" + key + "': not a number: '" + v + "'");
    }
    if (used != v.size()) {
        throw ConfigError("config key '" + key + "': trailing junk in '" + v + "'");
    }
    return d;
}

inline long long parse_int(const std::string& key, const std::string& v) {
    std::size_t used = 0;
    long long d = 0;
    try {
        d = std::stoll(v, &used);
    } catch (...) {
        throw ConfigError("config key '" + key + "': not an integer: '" + v + "'");
    }
    if (used != v.size()) {
        throw ConfigError("config key '" + key + "': trailing junk in '" + v + "'");
    }
    return d;
}

} // namespace iodet

inline RunConfig parse_run_config(const std::string& text) {
    RunConfig rc;
    std::size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? eol : eol - pos);
        pos = (eol == std::string::npos) ? text.size() + 1 : eol + 1;
        ++lineno;
        std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = iodet::trim(line);
        if (line.empty()) continue;
        std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        }
        std::string key = iodet::trim(line.substr(0, eq));
        std::string val = iodet::trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) {
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": empty key or value");
        }
        if (rc.present.count(key)) {
            throw ConfigError("config key '" + key + "' appears more than once");
        }
        rc.present.insert(key);

        using iodet::parse_int;
        using iodet::parse_real;
        if (key == "levels") rc.arch.levels = static_cast<int>(parse_int(key, val));
        else if (key == "steps_per_level") rc.arch.steps_per_level = static_cast<int>(parse_int(key, val));
        else if (key == "coupling_hidden_width") rc.arch.coupling_hidden_width = static_cast<int>(parse_int(key, val));
        else if (key == "coupling_hidden_layers") rc.arch.coupling_hidden_layers = static_cast<int>(parse_int(key, val));
        else if (key == "input_height") rc.arch.input_height = static_cast<int>(parse_int(key, val));
        else if (key == "input_width") rc.arch.input_width = static_cast<int>(parse_int(key, val));
        else if (key == "learning_rate") rc.train.learning_rate = parse_real(key, val);
        else if (key == "total_steps") rc.train.total_steps = static_cast<int>(parse_int(key, val));
        else if (key == "batch_size") rc.train.batch_size = static_cast<int>(parse_int(key, val));
        else if (key == "dequant_noise_scale") rc.train.dequant_noise_scale = parse_real(key, val);
        else if (key == "seed") rc.train.seed = static_cast<std::uint64_t>(parse_int(key, val));
        else if (key == "checkpoint_every") rc.train.checkpoint_every = static_cast<int>(parse_int(key, val));
        else if (key == "alpha") rc.harmonize.alpha = parse_real(key, val);
        else if (key == "beta1") rc.harmonize.beta1 = parse_real(key, val);
        else if (key == "beta2") rc.harmonize.beta2 = parse_real(key, val);
        else if (key == "iterations") rc.harmonize.iterations = static_cast<int>(parse_int(key, val));
        else if (key == "mask_quantile") rc.harmonize.mask_quantile = parse_real(key, val);
        else if (key == "init_mode") {
            if (val == "mean_image") rc.harmonize.init_mode = InitMode::MeanImage;
            else if (val == "source_image") rc.harmonize.init_mode = InitMode::SourceImage;
            else throw ConfigError("init_mode must be mean_image or source_image, got '" + val + "'");
        }
        else if (key == "data_dir") rc.data_dir = val;
        else throw ConfigError("unknown config key '" + key + "'");
    }
    return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    return parse_run_config(iodet::slurp(path));
}

} // namespace bh
