#pragma once

#include <csignal>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "traffic/detector.hpp"
#include "traffic/storage.hpp"

namespace fixtures {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (std::filesystem::temp_directory_path() / "traffic-test-XXXXXX").string();
        path_ = mkdtemp(tmpl.data());
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::vector<traffic::DetectionResult> random_results(std::mt19937_64& rng, std::size_t n,
                                                            std::size_t sources = 5,
                                                            std::int64_t base_ms = 1'735'000'000'000) {
    std::uniform_int_distribution<std::uint32_t> v(0, 60);
    std::uniform_int_distribution<std::int64_t> dt(0, 14LL * 86'400'000);
    std::uniform_int_distribution<std::size_t> src(0, sources - 1);
    std::vector<traffic::DetectionResult> out;
    for (std::size_t i = 0; i < n; ++i) {
        traffic::DetectionResult r;
        r.source = traffic::SourceId{"cam" + std::to_string(src(rng))};
        r.captured_at = traffic::instant_from_ms(base_ms + dt(rng));
        for (auto& c : r.counts.values) c = v(rng);
        r.model_id = "stub-pattern-v1";
        out.push_back(std::move(r));
    }
    return out;
}

/// Appends `batch` in a child process that is SIGKILLed right after its
/// `kill_after`-th row insert (0 = let the append finish, then die before any
/// cleanup). Returns the child's wait status.
inline int append_and_crash(const std::filesystem::path& db, const std::vector<traffic::DetectionResult>& batch,
                            std::size_t kill_after) {
    pid_t pid = fork();
    if (pid == 0) {
        traffic::DetectionStore store{db};
        store.set_insert_hook([kill_after](std::size_t rows) {
            if (rows == kill_after) raise(SIGKILL);
        });
        store.append(batch);
        raise(SIGKILL);
        _exit(0);
    }
    int status = 0;
    waitpid(pid, &status, 0);
    return status;
}

}  // namespace fixtures
