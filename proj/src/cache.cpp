#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ksl/cli.hpp"
#include "ksl/hash.hpp"

namespace ksl {

namespace {

constexpr char kMagic[4] = {'K', 'S', 'L', 'B'};
constexpr std::uint32_t kVersion = 1;

struct Array {
    std::string name;
    std::uint32_t rows = 0, cols = 0;
    std::vector<double> data;  // row-major
};

void put_u32(std::string& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xffu));
}
void put_i32(std::string& out, std::int32_t v) { put_u32(out, static_cast<std::uint32_t>(v)); }
void put_f64(std::string& out, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((u >> (8 * k)) & 0xffu));
}

class In {
public:
    explicit In(const std::string& s) : s_(s) {}
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s_[p_ + k])) << (8 * k);
        p_ += 4;
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        need(8);
        std::uint64_t u = 0;
        for (int k = 0; k < 8; ++k) u |= static_cast<std::uint64_t>(static_cast<unsigned char>(s_[p_ + k])) << (8 * k);
        p_ += 8;
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string v = s_.substr(p_, n);
        p_ += n;
        return v;
    }
    bool done() const { return p_ == s_.size(); }

private:
    void need(std::size_t n) const {
        if (p_ + n > s_.size()) throw std::runtime_error("cache: truncated file");
    }
    const std::string& s_;
    std::size_t p_ = 0;
};

Array from_matrix(const std::string& name, const Eigen::MatrixXd& M) {
    Array a;
    a.name = name;
    a.rows = static_cast<std::uint32_t>(M.rows());
    a.cols = static_cast<std::uint32_t>(M.cols());
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < M.cols(); ++j) a.data.push_back(M(i, j));
    return a;
}

Eigen::MatrixXd to_matrix(const Array& a) {
    Eigen::MatrixXd M(a.rows, a.cols);
    for (std::uint32_t i = 0; i < a.rows; ++i)
        for (std::uint32_t j = 0; j < a.cols; ++j) M(i, j) = a.data[static_cast<std::size_t>(i) * a.cols + j];
    return M;
}

Array from_elements(const std::string& name, const std::vector<BasisElement>& v) {
    Array a;
    a.name = name;
    a.rows = static_cast<std::uint32_t>(v.size());
    a.cols = 5;
    for (const auto& e : v)
        for (int x : {e.n, e.l, e.m, static_cast<int>(e.parity), e.block}) a.data.push_back(x);
    return a;
}

std::vector<BasisElement> to_elements(const Array& a) {
    if (a.cols != 5) throw std::runtime_error("cache: malformed element table " + a.name);
    std::vector<BasisElement> v(a.rows);
    for (std::uint32_t i = 0; i < a.rows; ++i) {
        const double* r = &a.data[static_cast<std::size_t>(i) * 5];
        v[i].n = static_cast<int>(r[0]);
        v[i].l = static_cast<int>(r[1]);
        v[i].m = static_cast<int>(r[2]);
        v[i].parity = static_cast<Parity>(static_cast<int>(r[3]));
        v[i].block = static_cast<int>(r[4]);
    }
    return v;
}

std::vector<Array> collect(const CollisionMatrices& c) {
    std::vector<Array> out;
    for (int l = 0; l <= c.angular_max; ++l) {
        out.push_back(from_matrix("nu_l." + std::to_string(l), c.nu_l[l]));
        out.push_back(from_matrix("K_l." + std::to_string(l), c.K_l[l]));
        out.push_back(from_matrix("K1_l." + std::to_string(l), c.K1_l[l]));
    }
    Array d;
    d.name = "diagnostics";
    d.rows = 1;
    d.cols = 2;
    d.data = {c.symmetry_defect, c.refinement_delta};
    out.push_back(d);
    if (!c.gamma.T.empty()) {
        out.push_back(from_elements("gamma.inputs", c.gamma.inputs));
        out.push_back(from_elements("gamma.outputs", c.gamma.outputs));
        Array t;
        t.name = "gamma.T";
        t.rows = 1;
        t.cols = static_cast<std::uint32_t>(c.gamma.T.size());
        t.data = c.gamma.T;
        out.push_back(t);
    }
    return out;
}

std::string serialize(const BasisSpec& spec, const std::vector<Array>& arrays) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);
    put_i32(out, spec.radial_order);
    put_i32(out, spec.angular_max);
    put_i32(out, spec.quad_points);
    put_u32(out, static_cast<std::uint32_t>(spec.sectors.size()));
    for (int m : spec.sectors) put_i32(out, m);
    put_u32(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        put_u32(out, static_cast<std::uint32_t>(a.name.size()));
        out += a.name;
        put_u32(out, a.rows);
        put_u32(out, a.cols);
        for (double v : a.data) put_f64(out, v);
    }
    return out;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_file(const std::filesystem::path& p, const std::string& data) {
    std::filesystem::create_directories(p.parent_path());
    const auto tmp = p.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out.write(data.data(), static_cast<std::streamsize>(data.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp);
    }
    std::filesystem::rename(tmp, p);
}

std::string options_text(const CollisionOptions& o) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "panel=%.17g;per_panel=%d;layer=%.17g;layer_nodes=%d;refine_tol=%.17g;gamma=%d", o.panel,
                  o.per_panel, o.layer, o.layer_nodes, o.refine_tol, o.with_gamma ? 1 : 0);
    return buf;
}

}  // namespace

std::string cache_key(const BasisSpec& spec, const CollisionOptions& opt) {
    return sha256_hex(spec.canonical() + "|" + options_text(opt) + "|KSLB" + std::to_string(kVersion)).substr(0, 16);
}

void write_cache(const std::filesystem::path& file, const Basis& b, const CollisionMatrices& c) {
    write_file(file, serialize(b.spec, collect(c)));
}

CollisionMatrices read_cache(const std::filesystem::path& file, const Basis& b) {
    const std::string data = read_file(file);
    In in(data);
    if (in.bytes(4) != std::string(kMagic, 4)) throw std::runtime_error("cache: bad magic");
    if (in.u32() != kVersion) throw std::runtime_error("cache: unsupported format version");
    BasisSpec spec;
    spec.radial_order = in.i32();
    spec.angular_max = in.i32();
    spec.quad_points = in.i32();
    const std::uint32_t ns = in.u32();
    if (ns > 16) throw std::runtime_error("cache: malformed sector list");
    spec.sectors.clear();
    for (std::uint32_t k = 0; k < ns; ++k) spec.sectors.push_back(in.i32());
    if (spec.canonical() != b.spec.canonical()) throw std::runtime_error("cache: basis spec mismatch");
    const std::uint32_t na = in.u32();
    std::map<std::string, Array> arrays;
    for (std::uint32_t k = 0; k < na; ++k) {
        Array a;
        const std::uint32_t len = in.u32();
        if (len > 256) throw std::runtime_error("cache: malformed array name");
        a.name = in.bytes(len);
        a.rows = in.u32();
        a.cols = in.u32();
        const std::size_t n = static_cast<std::size_t>(a.rows) * a.cols;
        if (n > data.size() / 8) throw std::runtime_error("cache: malformed array size");
        a.data.resize(n);
        for (auto& v : a.data) v = in.f64();
        arrays[a.name] = std::move(a);
    }
    if (!in.done()) throw std::runtime_error("cache: trailing bytes");
    auto get = [&](const std::string& name) -> const Array& {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw std::runtime_error("cache: missing array " + name);
        return it->second;
    };
    CollisionMatrices c;
    c.radial_order = spec.radial_order;
    c.angular_max = spec.angular_max;
    const int N = spec.radial_order;
    for (int l = 0; l <= spec.angular_max; ++l) {
        for (auto* target : {&c.nu_l, &c.K_l, &c.K1_l}) {
            const char* prefix = target == &c.nu_l ? "nu_l." : (target == &c.K_l ? "K_l." : "K1_l.");
            const Array& a = get(prefix + std::to_string(l));
            if (static_cast<int>(a.rows) != N || static_cast<int>(a.cols) != N)
                throw std::runtime_error("cache: wrong block size for " + a.name);
            target->push_back(to_matrix(a));
        }
    }
    const Array& d = get("diagnostics");
    if (d.data.size() != 2) throw std::runtime_error("cache: malformed diagnostics");
    finalize_collision(b, c);
    c.symmetry_defect = d.data[0];
    c.refinement_delta = d.data[1];
    if (arrays.count("gamma.T")) {
        c.gamma.inputs = to_elements(get("gamma.inputs"));
        c.gamma.outputs = to_elements(get("gamma.outputs"));
        c.gamma.T = get("gamma.T").data;
        if (c.gamma.T.size() != static_cast<std::size_t>(c.gamma.nin()) * c.gamma.nin() * c.gamma.nout())
            throw std::runtime_error("cache: malformed gamma tensor");
    }
    return c;
}

CollisionMatrices cached_collision(const std::filesystem::path& dir, const Basis& b, const CollisionOptions& opt,
                                   CacheEntry* entry) {
    CacheEntry e;
    e.key = cache_key(b.spec, opt);
    e.file = dir / ("ksl-" + e.key + ".bin");
    e.manifest = dir / ("ksl-" + e.key + ".json");
    if (std::filesystem::exists(e.file) || std::filesystem::exists(e.manifest)) {
        try {
            const nlohmann::json m = nlohmann::json::parse(read_file(e.manifest));
            const std::string data = read_file(e.file);
            const std::string sha = sha256_hex(data);
            if (m.at("sha256").get<std::string>() != sha) throw std::runtime_error("checksum mismatch");
            if (m.at("key").get<std::string>() != e.key) throw std::runtime_error("key mismatch");
            CollisionMatrices c = read_cache(e.file, b);
            e.sha256 = sha;
            e.loaded = true;
            if (entry) *entry = e;
            return c;
        } catch (const std::exception& ex) {
            e.rebuilt = true;
            e.warning = "cache entry " + e.file.string() + " is invalid (" + ex.what() + "); rebuilding";
            std::cerr << "warning: " << e.warning << "\n";
        }
    }
    CollisionMatrices c = assemble_collision(b, opt);
    const std::string data = serialize(b.spec, collect(c));
    write_file(e.file, data);
    e.sha256 = sha256_hex(data);
    nlohmann::json m;
    m["format"] = "KSLB";
    m["version"] = kVersion;
    m["key"] = e.key;
    m["basis"] = b.spec.canonical();
    m["options"] = options_text(opt);
    m["radial_order"] = b.spec.radial_order;
    m["angular_max"] = b.spec.angular_max;
    m["basis_dim"] = b.dim();
    m["bytes"] = data.size();
    m["sha256"] = e.sha256;
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& a : collect(c)) arr.push_back({{"name", a.name}, {"rows", a.rows}, {"cols", a.cols}});
    m["arrays"] = arr;
    write_file(e.manifest, m.dump(2) + "\n");
    // serve the exact bytes that were written
    CollisionMatrices r = read_cache(e.file, b);
    if (entry) *entry = e;
    return r;
}

}  // namespace ksl
