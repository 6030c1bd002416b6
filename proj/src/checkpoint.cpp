#include "emmpd/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>

namespace emmpd {

namespace {

constexpr char kMagic[4] = {'E', 'M', 'P', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                            static_cast<unsigned char>(v >> 16),
                            static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(buf), 4);
}

void put_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint32_t get_u32(std::istream& is, const std::filesystem::path& path) {
    unsigned char buf[4];
    if (!is.read(reinterpret_cast<char*>(buf), 4))
        throw IoError(IoError::Code::Truncated, "truncated checkpoint: " + path.string());
    return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
           (static_cast<std::uint32_t>(buf[2]) << 16) |
           (static_cast<std::uint32_t>(buf[3]) << 24);
}

double get_f64(std::istream& is, const std::filesystem::path& path) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8))
        throw IoError(IoError::Code::Truncated, "truncated checkpoint: " + path.string());
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void put_param(std::ostream& os, const Param& p) {
    put_u32(os, static_cast<std::uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put_u32(os, static_cast<std::uint32_t>(p.value.rows));
    put_u32(os, static_cast<std::uint32_t>(p.value.cols));
    for (double v : p.value.data) put_f64(os, v);
}

}  // namespace

void save_checkpoint(const TrainResult& result, const TrainConfig& config, int d, int c,
                     const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError(IoError::Code::WriteFailed, "cannot write " + path.string());
    os.write(kMagic, 4);
    put_u32(os, kVersion);

    put_u32(os, static_cast<std::uint32_t>(d));
    put_u32(os, static_cast<std::uint32_t>(c));
    put_u32(os, static_cast<std::uint32_t>(config.t));
    put_u32(os, static_cast<std::uint32_t>(config.heads));
    put_u32(os, static_cast<std::uint32_t>(config.top_k));
    put_u32(os, static_cast<std::uint32_t>(config.w));
    put_u32(os, static_cast<std::uint32_t>(config.k_nn));
    put_u32(os, static_cast<std::uint32_t>(config.selector_hidden));
    put_u32(os, config.task_mode == TaskMode::Multilabel ? 0u : 1u);
    put_u32(os, static_cast<std::uint32_t>(config.sampling));
    put_u32(os, static_cast<std::uint32_t>(config.fusion_mode));
    std::uint32_t flags = 0;
    if (config.use_2dcom) flags |= 1u;
    if (config.use_attsel) flags |= 2u;
    if (config.use_gcn) flags |= 4u;
    if (config.use_text) flags |= 8u;
    if (config.gcn_before) flags |= 16u;
    if (result.selector_trained) flags |= 32u;
    put_u32(os, flags);
    put_u32(os, static_cast<std::uint32_t>(config.seed));
    put_u32(os, static_cast<std::uint32_t>(config.seed >> 32));

    TrainResult& mut = const_cast<TrainResult&>(result);
    std::vector<Param*> params = mut.selector.trainable();
    for (Param* p : mut.fusion.all_params()) params.push_back(p);
    put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const Param* p : params) put_param(os, *p);
    if (!os) throw IoError(IoError::Code::WriteFailed, "write failed: " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError(IoError::Code::NotFound, "cannot open " + path.string());
    char magic[4];
    if (!is.read(magic, 4))
        throw IoError(IoError::Code::Truncated, "truncated checkpoint: " + path.string());
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw IoError(IoError::Code::BadMagic, "not a checkpoint: " + path.string());
    const std::uint32_t version = get_u32(is, path);
    if (version != kVersion)
        throw IoError(IoError::Code::VersionMismatch,
                      "unsupported checkpoint version " + std::to_string(version));

    LoadedCheckpoint ck;
    ck.d = static_cast<int>(get_u32(is, path));
    ck.c = static_cast<int>(get_u32(is, path));
    ck.config.t = static_cast<int>(get_u32(is, path));
    ck.config.heads = static_cast<int>(get_u32(is, path));
    ck.config.top_k = static_cast<int>(get_u32(is, path));
    ck.config.w = static_cast<int>(get_u32(is, path));
    ck.config.k_nn = static_cast<int>(get_u32(is, path));
    ck.config.selector_hidden = static_cast<int>(get_u32(is, path));
    ck.config.task_mode =
        get_u32(is, path) == 0 ? TaskMode::Multilabel : TaskMode::Multiclass;
    ck.config.sampling = static_cast<SamplingMode>(get_u32(is, path));
    ck.config.fusion_mode = static_cast<FusionMode>(get_u32(is, path));
    const std::uint32_t flags = get_u32(is, path);
    ck.config.use_2dcom = flags & 1u;
    ck.config.use_attsel = flags & 2u;
    ck.config.use_gcn = flags & 4u;
    ck.config.use_text = flags & 8u;
    ck.config.gcn_before = flags & 16u;
    ck.result.selector_trained = flags & 32u;
    const std::uint64_t seed_lo = get_u32(is, path);
    const std::uint64_t seed_hi = get_u32(is, path);
    ck.config.seed = seed_lo | (seed_hi << 32);

    ck.result.selector = SelectorParams(ck.d, ck.config.selector_hidden, ck.c, 0);
    ModelConfig mcfg;
    mcfg.d = ck.d;
    mcfg.c = ck.c;
    mcfg.t = ck.config.t;
    mcfg.heads = ck.config.heads;
    mcfg.k_nn = ck.config.k_nn;
    mcfg.use_gcn = ck.config.use_gcn;
    mcfg.use_text = ck.config.use_text;
    mcfg.fusion_mode = ck.config.fusion_mode;
    ck.result.fusion = FusionParams(mcfg, Matrix(ck.config.t, ck.d), 0);

    std::map<std::string, Param*> by_name;
    for (Param* p : ck.result.selector.trainable()) by_name[p->name] = p;
    for (Param* p : ck.result.fusion.all_params()) by_name[p->name] = p;

    const std::uint32_t count = get_u32(is, path);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = get_u32(is, path);
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw IoError(IoError::Code::Truncated, "truncated checkpoint: " + path.string());
        const std::uint32_t rows = get_u32(is, path);
        const std::uint32_t cols = get_u32(is, path);
        const auto it = by_name.find(name);
        if (it == by_name.end())
            throw IoError(IoError::Code::InvalidData,
                          "unknown parameter \"" + name + "\" in " + path.string());
        Param* p = it->second;
        if (p->value.rows != static_cast<int>(rows) ||
            p->value.cols != static_cast<int>(cols))
            throw IoError(IoError::Code::DimMismatch,
                          "parameter \"" + name + "\" is " + std::to_string(rows) + "x" +
                              std::to_string(cols) + ", expected " + p->value.shape_str());
        for (auto& v : p->value.data) v = get_f64(is, path);
    }
    return ck;
}

}  // namespace emmpd
