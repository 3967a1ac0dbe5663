/*
 * C interface to the traffic analytics pipeline.
 *
 * Every function returns a tp_status. On failure, tp_last_error() returns a
 * message for the calling thread that stays valid until its next call into
 * the library. Handles are opaque and owned by the caller; release them with
 * the matching *_close / *_destroy function.
 */
#ifndef TRAFFIC_TRAFFIC_H
#define TRAFFIC_TRAFFIC_H

#include <stddef.h>
#include <stdint.h>

#if defined(TP_BUILDING_LIBRARY)
#define TP_API __attribute__((visibility("default")))
#else
#define TP_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tp_status {
    TP_OK = 0,
    TP_ERR_INVALID_ARGUMENT = 1,
    TP_ERR_CONFIG = 2,
    TP_ERR_IO = 3,
    TP_ERR_BACKEND = 4,
    TP_ERR_RUNTIME = 5
} tp_status;

TP_API const char* tp_last_error(void);
TP_API const char* tp_version(void);

/* ---- detection store ------------------------------------------------- */

typedef struct tp_store tp_store;

TP_API tp_status tp_store_open(const char* path, tp_store** out);
TP_API void tp_store_close(tp_store* store);
TP_API tp_status tp_store_row_count(const tp_store* store, uint64_t* rows);
TP_API tp_status tp_store_export_csv(const tp_store* store, const char* csv_path, uint64_t* rows);
TP_API tp_status tp_store_import_csv(tp_store* store, const char* csv_path, uint64_t* written,
                                     uint64_t* skipped);

/* ---- analysis --------------------------------------------------------- */

typedef struct tp_analysis_options {
    uint32_t window_size;        /* rolling mean length in observations, >= 1 */
    const char* split;           /* RFC 3339 instant, or local "YYYY-MM-DD[THH:MM[:SS]]" in timezone */
    const char* timezone;        /* IANA zone name */
    const char* const* windows;  /* "Label:h1-h2" entries; NULL/0 selects the defaults */
    size_t window_count;
    const char* class_selector;  /* "total" or a vehicle class name */
} tp_analysis_options;

TP_API void tp_analysis_options_default(tp_analysis_options* options);

/* Writes the peak-differential CSV. `observations` receives the number of rows read. */
TP_API tp_status tp_analyze(const tp_store* store, const tp_analysis_options* options, const char* out_csv_path,
                            uint64_t* report_rows, uint64_t* observations);

/* Bucket means per (source, window, day type, hour) for external plotting. */
TP_API tp_status tp_write_hourly_means(const tp_store* store, const tp_analysis_options* options,
                                       const char* out_csv_path, uint64_t* rows);

typedef enum tp_report_format { TP_REPORT_TABLE = 0, TP_REPORT_CSV = 1 } tp_report_format;

/* Summarizes an analysis CSV. out_path NULL writes to stdout. */
TP_API tp_status tp_report(const char* analysis_csv_path, tp_report_format format, const char* out_path,
                           uint64_t* rows);

/* ---- collector -------------------------------------------------------- */

typedef struct tp_collector_options {
    uint32_t workers;
    uint32_t batch_size;
    double download_timeout_ms;
    double batch_max_wait_ms;
    uint32_t queue_capacity;
    double confidence_threshold;
    int use_source_timestamp; /* take captured_at from the camera's capture-time header */
    const char* detector;     /* "stub" or "exec:<shell command>" */
} tp_collector_options;

typedef struct tp_collector_stats {
    uint64_t fetched;
    uint64_t discarded_timeout;
    uint64_t discarded_error;
    uint64_t discarded_queue_full;
    uint64_t batched;
    uint64_t persisted;
    uint64_t sink_dropped;
    uint64_t batches;
    uint64_t in_flight;
    uint64_t resident_frames;
    uint64_t max_resident_frames;
    uint64_t rows_written;
    uint64_t rows_skipped;
} tp_collector_stats;

typedef struct tp_collector tp_collector;

TP_API void tp_collector_options_default(tp_collector_options* options);
/* The store must outlive the collector. */
TP_API tp_status tp_collector_create(const char* cameras_json_path, const tp_collector_options* options,
                                     tp_store* store, tp_collector** out);
TP_API tp_status tp_collector_start(tp_collector* collector);
/* Stops polling and drains queued frames into the store. Idempotent. */
TP_API tp_status tp_collector_stop(tp_collector* collector);
TP_API tp_status tp_collector_get_stats(const tp_collector* collector, tp_collector_stats* stats);
TP_API void tp_collector_destroy(tp_collector* collector);

/* ---- camera simulator -------------------------------------------------- */

typedef struct tp_camsim tp_camsim;

/* port 0 picks a free port. */
TP_API tp_status tp_camsim_start(const char* scenario_json, const char* host, int port, tp_camsim** out);
TP_API tp_status tp_camsim_port(const tp_camsim* sim, int* port);
TP_API tp_status tp_camsim_virtual_now_ms(const tp_camsim* sim, int64_t* now_ms);
/* Writes the collector camera list (JSON) for this server. */
TP_API tp_status tp_camsim_write_cameras(const tp_camsim* sim, const char* path, uint32_t poll_interval_ms);
/* One JSON object per served request: source, capture_ms, latency_ms, counts. */
TP_API tp_status tp_camsim_write_request_log(const tp_camsim* sim, const char* path, uint64_t* entries);
TP_API tp_status tp_camsim_stop(tp_camsim* sim);
TP_API void tp_camsim_destroy(tp_camsim* sim);

#ifdef __cplusplus
}
#endif

#endif /* TRAFFIC_TRAFFIC_H */
