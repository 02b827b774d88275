#ifndef BAEOED_BLACK_BOX_HPP
#define BAEOED_BLACK_BOX_HPP

#include <fcntl.h>
#include <signal.h>
#include <stdlib.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "baeoed/ensemble.hpp"
#include "baeoed/error.hpp"

namespace baeoed {

/// External forward model driven through the file-based subprocess protocol:
///   <executable> <input.baem> <output.baem> <seed>
struct BlackBoxSpec {
  std::filesystem::path executable;
  std::filesystem::path working_directory = ".";
  double timeout_seconds = 3600.0;
  int max_parallel = 1;
  /// Rows handed to one invocation. Chunking depends only on this value,
  /// never on max_parallel, so results do not depend on scheduling.
  Eigen::Index rows_per_call = 1;
  /// Expected data layout; 0 means take it from the child's output header.
  std::uint32_t sensors = 0;
  std::uint32_t time_steps = 0;
};

/// Per-invocation seed; a splitmix64 step over (seed, chunk index).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace detail {

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "baeoed-XXXXXX").string();
    if (::mkdtemp(tmpl.data()) == nullptr) throw IoError("cannot create temporary directory");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

struct Child {
  pid_t pid = -1;
  std::size_t chunk = 0;
  std::chrono::steady_clock::time_point started;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline pid_t spawn(const std::filesystem::path& exe, const std::filesystem::path& cwd,
                   const std::vector<std::string>& args, const std::filesystem::path& err_file) {
  std::vector<char*> argv;
  std::string exe_s = exe.string();
  argv.push_back(exe_s.data());
  std::vector<std::string> copy = args;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  const std::string cwd_s = cwd.string();
  const std::string err_s = err_file.string();

  const pid_t pid = ::fork();
  if (pid < 0) throw SubprocessFailure(-1, "", "fork failed");
  if (pid == 0) {
    const int fd = ::open(err_s.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd >= 0) {
      ::dup2(fd, STDERR_FILENO);
      ::close(fd);
    }
    if (::chdir(cwd_s.c_str()) != 0) ::_exit(126);
    ::execv(exe_s.c_str(), argv.data());
    ::_exit(127);
  }
  return pid;
}

inline void kill_all(std::vector<Child>& running) {
  for (auto& c : running) ::kill(c.pid, SIGKILL);
  for (auto& c : running) {
    int status = 0;
    ::waitpid(c.pid, &status, 0);
  }
  running.clear();
}

}  // namespace detail

inline void check_black_box(const BlackBoxSpec& spec) {
  namespace fs = std::filesystem;
  if (!fs::exists(spec.executable) || ::access(spec.executable.c_str(), X_OK) != 0)
    throw InvalidArgument("black-box executable is not invocable: " + spec.executable.string());
  if (!fs::is_directory(spec.working_directory))
    throw InvalidArgument("working directory does not exist: " + spec.working_directory.string());
  if (spec.max_parallel < 1) throw InvalidArgument("max_parallel must be >= 1");
  if (spec.rows_per_call < 1) throw InvalidArgument("rows_per_call must be >= 1");
  if (!(spec.timeout_seconds > 0.0)) throw InvalidArgument("timeout must be positive");
}

/*
 * Evaluates the external model on every parameter row. Rows are split into
 * fixed chunks of rows_per_call; up to max_parallel children run at once and
 * outputs are assembled by chunk index. Any failing chunk aborts the whole
 * run after all children are killed and reaped.
 */
inline Ensemble run_black_box(const BlackBoxSpec& spec, const Matrix& params, std::uint64_t seed) {
  check_black_box(spec);
  if (!params.allFinite()) throw NonFiniteValue("black-box params contain non-finite values");
  const auto exe = std::filesystem::absolute(spec.executable);
  const auto cwd = std::filesystem::absolute(spec.working_directory);
  const Eigen::Index q = params.rows();
  const Eigen::Index per = spec.rows_per_call;
  const std::size_t n_chunks = static_cast<std::size_t>((q + per - 1) / per);

  detail::TempDir tmp;
  auto in_path = [&](std::size_t c) { return tmp.path() / ("in_" + std::to_string(c) + ".baem"); };
  auto out_path = [&](std::size_t c) { return tmp.path() / ("out_" + std::to_string(c) + ".baem"); };
  auto err_path = [&](std::size_t c) { return tmp.path() / ("err_" + std::to_string(c) + ".txt"); };

  for (std::size_t c = 0; c < n_chunks; ++c) {
    const Eigen::Index r0 = static_cast<Eigen::Index>(c) * per;
    const Eigen::Index rows = std::min(per, q - r0);
    save_baem_matrix({params.middleRows(r0, rows), false, spec.sensors, spec.time_steps}, in_path(c));
  }

  std::vector<BaemMatrix> outputs(n_chunks);
  std::vector<detail::Child> running;
  std::size_t next = 0;
  const auto timeout = std::chrono::duration<double>(spec.timeout_seconds);

  auto fail = [&](auto&& error) {
    detail::kill_all(running);
    throw error;
  };

  while (next < n_chunks || !running.empty()) {
    while (next < n_chunks && running.size() < static_cast<std::size_t>(spec.max_parallel)) {
      const std::vector<std::string> args = {in_path(next).string(), out_path(next).string(),
                                             std::to_string(derive_seed(seed, next))};
      try {
        running.push_back({detail::spawn(exe, cwd, args, err_path(next)), next,
                           std::chrono::steady_clock::now()});
      } catch (...) {
        detail::kill_all(running);
        throw;
      }
      ++next;
    }
    bool progressed = false;
    for (std::size_t i = 0; i < running.size();) {
      int status = 0;
      const pid_t r = ::waitpid(running[i].pid, &status, WNOHANG);
      if (r == 0) {
        if (std::chrono::steady_clock::now() - running[i].started > timeout) {
          const std::size_t chunk = running[i].chunk;
          fail(Timeout("chunk " + std::to_string(chunk) + " exceeded " +
                       std::to_string(spec.timeout_seconds) + " s"));
        }
        ++i;
        continue;
      }
      progressed = true;
      const detail::Child done = running[i];
      running.erase(running.begin() + static_cast<std::ptrdiff_t>(i));
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
      if (r < 0 || code != 0) {
        fail(SubprocessFailure(code, detail::slurp(err_path(done.chunk)),
                               "chunk " + std::to_string(done.chunk) + " exited with code " +
                                   std::to_string(code)));
      }
      try {
        outputs[done.chunk] = load_baem_matrix(out_path(done.chunk));
      } catch (const Error& e) {
        fail(FormatError("child output for chunk " + std::to_string(done.chunk) + ": " + e.what()));
      }
      const Eigen::Index expect_rows =
          std::min(per, q - static_cast<Eigen::Index>(done.chunk) * per);
      if (outputs[done.chunk].values.rows() != expect_rows)
        fail(FormatError("child output for chunk " + std::to_string(done.chunk) + " has " +
                         std::to_string(outputs[done.chunk].values.rows()) + " rows, expected " +
                         std::to_string(expect_rows)));
    }
    if (!progressed && !running.empty()) std::this_thread::sleep_for(std::chrono::milliseconds(1));
  }

  const Eigen::Index n_d = n_chunks ? outputs.front().values.cols() : 0;
  Ensemble e;
  e.params = params;
  e.accurate_data.resize(q, n_d);
  for (std::size_t c = 0; c < n_chunks; ++c) {
    if (outputs[c].values.cols() != n_d)
      throw FormatError("inconsistent output width across chunks");
    e.accurate_data.middleRows(static_cast<Eigen::Index>(c) * per, outputs[c].values.rows()) =
        outputs[c].values;
  }
  std::uint32_t s = spec.sensors, nt = spec.time_steps;
  if (s == 0 && nt == 0 && n_chunks) {
    s = outputs.front().sensors;
    nt = outputs.front().time_steps;
  }
  if (s == 0 && nt == 0) {
    s = static_cast<std::uint32_t>(n_d);
    nt = 1;
  }
  e.meta.sensors = s;
  e.meta.time_steps = nt;
  e.meta.seed = seed;
  e.meta.provenance = "black-box:" + exe.filename().string();
  validate(e);
  return e;
}

}  // namespace baeoed

#endif  // BAEOED_BLACK_BOX_HPP
