#include "emmpd/bag.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace emmpd {

namespace {

constexpr char kBagMagic[4] = {'E', 'M', 'P', 'D'};
constexpr char kBankMagic[4] = {'E', 'M', 'P', 'T'};
constexpr std::uint32_t kFormatVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(buf), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char buf[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(buf), 2);
}

void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }

void put_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4))
        throw IoError(IoError::Code::Truncated, "truncated file: " + path.string());
    return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
           (static_cast<std::uint32_t>(buf[2]) << 16) |
           (static_cast<std::uint32_t>(buf[3]) << 24);
}

std::uint16_t get_u16(std::istream& is, const std::filesystem::path& path) {
    unsigned char buf[2];
    if (!is.read(reinterpret_cast<char*>(buf), 2))
        throw IoError(IoError::Code::Truncated, "truncated file: " + path.string());
    return static_cast<std::uint16_t>(buf[0] | (buf[1] << 8));
}

std::int32_t get_i32(std::istream& is, const std::filesystem::path& path) {
    return static_cast<std::int32_t>(get_u32(is, path));
}

float get_f32(std::istream& is, const std::filesystem::path& path) {
    const std::uint32_t bits = get_u32(is, path);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void check_magic(std::istream& is, const char expected[4], const std::filesystem::path& path) {
    char magic[4];
    if (!is.read(magic, 4))
        throw IoError(IoError::Code::Truncated, "truncated header: " + path.string());
    if (std::memcmp(magic, expected, 4) != 0)
        throw IoError(IoError::Code::BadMagic,
                      "bad magic in " + path.string() + ", expected \"" +
                          std::string(expected, 4) + "\"");
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError(IoError::Code::NotFound, "cannot open " + path.string());
    return is;
}

}  // namespace

void PatchBag::validate() const {
    if (coords.empty()) throw IoError(IoError::Code::EmptyBag, "bag has no patches");
    if (embeddings.rows != n() || embeddings.cols != d)
        throw IoError(IoError::Code::InvalidData,
                      "bag embeddings " + embeddings.shape_str() + " inconsistent with n=" +
                          std::to_string(n()) + ", d=" + std::to_string(d));
    std::set<std::tuple<std::uint16_t, std::int32_t, std::int32_t>> seen;
    for (const Coord& c : coords) {
        if (c.slide >= num_slides)
            throw IoError(IoError::Code::InvalidData, "slide index out of range");
        if (!seen.insert({c.slide, c.gx, c.gy}).second)
            throw IoError(IoError::Code::InvalidData,
                          "duplicate grid coordinate (" + std::to_string(c.slide) + "," +
                              std::to_string(c.gx) + "," + std::to_string(c.gy) + ")");
    }
}

void write_bag(const PatchBag& bag, const std::filesystem::path& path) {
    bag.validate();
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(IoError::Code::WriteFailed, "cannot write " + path.string());
    os.write(kBagMagic, 4);
    put_u32(os, kFormatVersion);
    put_u32(os, static_cast<std::uint32_t>(bag.n()));
    put_u32(os, static_cast<std::uint32_t>(bag.d));
    put_u32(os, static_cast<std::uint32_t>(bag.num_slides));
    for (const PatchBag::Coord& c : bag.coords) {
        put_u16(os, c.slide);
        put_i32(os, c.gx);
        put_i32(os, c.gy);
    }
    for (double v : bag.embeddings.data) put_f32(os, static_cast<float>(v));
    if (!os) throw IoError(IoError::Code::WriteFailed, "write failed: " + path.string());
}

PatchBag read_bag(const std::filesystem::path& path, int expected_d) {
    std::ifstream is = open_input(path);
    check_magic(is, kBagMagic, path);
    const std::uint32_t version = get_u32(is, path);
    if (version != kFormatVersion)
        throw IoError(IoError::Code::VersionMismatch,
                      "unsupported bag version " + std::to_string(version) + " in " +
                          path.string());
    const std::uint32_t n = get_u32(is, path);
    const std::uint32_t d = get_u32(is, path);
    const std::uint32_t num_slides = get_u32(is, path);
    if (n == 0)
        throw IoError(IoError::Code::EmptyBag, "empty bag (N=0): " + path.string());
    if (expected_d >= 0 && static_cast<int>(d) != expected_d)
        throw IoError(IoError::Code::DimMismatch,
                      "bag d=" + std::to_string(d) + " does not match manifest d=" +
                          std::to_string(expected_d) + ": " + path.string());

    PatchBag bag;
    bag.patient_id = path.stem().string();
    bag.d = static_cast<int>(d);
    bag.num_slides = static_cast<int>(num_slides);
    bag.coords.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        bag.coords[i].slide = get_u16(is, path);
        bag.coords[i].gx = get_i32(is, path);
        bag.coords[i].gy = get_i32(is, path);
    }
    bag.embeddings = Matrix(static_cast<int>(n), static_cast<int>(d));
    for (auto& v : bag.embeddings.data) v = static_cast<double>(get_f32(is, path));
    bag.validate();
    require_finite(bag.embeddings, "read_bag " + path.string());
    return bag;
}

void write_text_bank(const Matrix& frozen, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(IoError::Code::WriteFailed, "cannot write " + path.string());
    os.write(kBankMagic, 4);
    put_u32(os, kFormatVersion);
    put_u32(os, static_cast<std::uint32_t>(frozen.rows));
    put_u32(os, static_cast<std::uint32_t>(frozen.cols));
    for (double v : frozen.data) put_f32(os, static_cast<float>(v));
    if (!os) throw IoError(IoError::Code::WriteFailed, "write failed: " + path.string());
}

TextBank load_text_bank(const std::filesystem::path& path, int t, std::uint64_t seed,
                        int expected_c) {
    std::ifstream is = open_input(path);
    check_magic(is, kBankMagic, path);
    const std::uint32_t version = get_u32(is, path);
    if (version != kFormatVersion)
        throw IoError(IoError::Code::VersionMismatch,
                      "unsupported text bank version " + std::to_string(version));
    const std::uint32_t c = get_u32(is, path);
    const std::uint32_t d = get_u32(is, path);
    if (expected_c >= 0 && static_cast<int>(c) != expected_c)
        throw IoError(IoError::Code::ClassMismatch,
                      "text bank C=" + std::to_string(c) + " does not match manifest C=" +
                          std::to_string(expected_c));
    TextBank bank;
    bank.c = static_cast<int>(c);
    bank.t = t;
    bank.d = static_cast<int>(d);
    bank.frozen = Matrix(bank.c, bank.d);
    for (auto& v : bank.frozen.data) v = static_cast<double>(get_f32(is, path));
    bank.learnable_init = Matrix(t, bank.d);
    Rng rng(seed);
    bank.learnable_init.fill_uniform(rng, -0.02, 0.02);
    require_finite(bank.frozen, "load_text_bank " + path.string());
    return bank;
}

const char* task_mode_name(TaskMode m) {
    return m == TaskMode::Multilabel ? "multilabel" : "multiclass";
}

TaskMode task_mode_from_name(const std::string& s) {
    if (s == "multilabel") return TaskMode::Multilabel;
    if (s == "multiclass") return TaskMode::Multiclass;
    throw ConfigError("unknown task_mode \"" + s + "\"");
}

void DatasetManifest::validate() const {
    if (c < 2) throw IoError(IoError::Code::InvalidData, "manifest requires C >= 2");
    if (d < 1) throw IoError(IoError::Code::InvalidData, "manifest requires d >= 1");
    if (static_cast<int>(class_names.size()) != c)
        throw IoError(IoError::Code::InvalidData, "class_names count != C");
    std::set<std::string> seen;
    auto check_split = [&](const std::vector<ManifestEntry>& split, const char* name) {
        for (const ManifestEntry& e : split) {
            if (static_cast<int>(e.label.size()) != c)
                throw IoError(IoError::Code::InvalidData,
                              std::string("label length != C for ") + e.patient_id);
            if (!seen.insert(e.patient_id).second)
                throw IoError(IoError::Code::InvalidData,
                              "patient " + e.patient_id + " appears in more than one split (" +
                                  name + ")");
        }
    };
    check_split(train, "train");
    check_split(val, "val");
    check_split(test, "test");
}

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError(IoError::Code::WriteFailed, "cannot write " + path.string());
    os << "emmpd-manifest 1\n";
    os << "d " << m.d << "\n";
    os << "C " << m.c << "\n";
    os << "t " << m.t << "\n";
    os << "task_mode " << task_mode_name(m.task_mode) << "\n";
    os << "class_names";
    for (const auto& cn : m.class_names) os << " " << cn;
    os << "\n";
    os << "text_bank " << m.text_bank_path << "\n";
    auto dump_split = [&](const std::vector<ManifestEntry>& split, const char* name) {
        os << "split " << name << "\n";
        for (const ManifestEntry& e : split) {
            os << "bag " << e.path;
            for (int l : e.label) os << " " << l;
            os << "\n";
        }
    };
    dump_split(m.train, "train");
    dump_split(m.val, "val");
    dump_split(m.test, "test");
    if (!os) throw IoError(IoError::Code::WriteFailed, "write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError(IoError::Code::NotFound, "cannot open " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();
    std::string line;
    if (!std::getline(is, line) || line.rfind("emmpd-manifest", 0) != 0)
        throw IoError(IoError::Code::BadMagic, "not an emmpd manifest: " + path.string());
    std::vector<ManifestEntry>* current = nullptr;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        if (key == "d")
            ss >> m.d;
        else if (key == "C")
            ss >> m.c;
        else if (key == "t")
            ss >> m.t;
        else if (key == "task_mode") {
            std::string v;
            ss >> v;
            m.task_mode = task_mode_from_name(v);
        } else if (key == "class_names") {
            std::string v;
            while (ss >> v) m.class_names.push_back(v);
        } else if (key == "text_bank") {
            ss >> m.text_bank_path;
        } else if (key == "split") {
            std::string v;
            ss >> v;
            if (v == "train")
                current = &m.train;
            else if (v == "val")
                current = &m.val;
            else if (v == "test")
                current = &m.test;
            else
                throw IoError(IoError::Code::InvalidData, "unknown split \"" + v + "\"");
        } else if (key == "bag") {
            if (!current)
                throw IoError(IoError::Code::InvalidData, "bag entry before split header");
            ManifestEntry e;
            ss >> e.path;
            int l;
            while (ss >> l) e.label.push_back(l);
            e.patient_id = std::filesystem::path(e.path).stem().string();
            current->push_back(std::move(e));
        } else {
            throw IoError(IoError::Code::InvalidData,
                          "unknown manifest key \"" + key + "\" in " + path.string());
        }
    }
    m.validate();
    return m;
}

}  // namespace emmpd
