/*
 * Fast validation of one complete JSON value inside a byte buffer.
 *
 * skip_value(buf, pos) -> (status, end, compact)
 *   status 0: a valid value spans buf[pos:end]; compact is that value with
 *             insignificant whitespace removed, or None if it had none
 *   status 1: the buffer ends (or nesting gets too deep) before the value
 *             completes; the caller falls back to token-level scanning
 *   status 2: invalid JSON at offset end
 *
 * Used by the stream builder to copy subtrees that no subscription can
 * match without tokenizing them in Python.
 */
#define PY_SSIZE_T_CLEAN
#include <Python.h>

#define MAX_DEPTH 512

enum { S_VALUE, S_VALUE_OR_END, S_KEY_OR_END, S_KEY, S_COLON, S_COMMA_OR_END };

static int is_ws(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }
static int is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
static int is_hex(unsigned char c) {
    return is_digit(c) || (c >= 'a' && c <= 'f') || (c >= 'A' && c <= 'F');
}

/* returns 0 ok (*p past the closing quote), 1 incomplete, 2 error (*p at fault) */
static int scan_string(const unsigned char *b, Py_ssize_t n, Py_ssize_t *p) {
    Py_ssize_t i = *p + 1;
    while (i < n) {
        unsigned char c = b[i];
        if (c == '"') { *p = i + 1; return 0; }
        if (c < 0x20) { *p = i; return 2; }
        if (c == '\\') {
            if (i + 1 >= n) return 1;
            c = b[i + 1];
            if (c == 'u') {
                int k;
                if (i + 5 >= n) return 1;
                for (k = 2; k < 6; k++) {
                    if (!is_hex(b[i + k])) { *p = i + k; return 2; }
                }
                i += 6;
                continue;
            }
            if (c == '"' || c == '\\' || c == '/' || c == 'b' || c == 'f' || c == 'n' || c == 'r' || c == 't') {
                i += 2;
                continue;
            }
            *p = i + 1;
            return 2;
        }
        i++;
    }
    return 1;
}

static int scan_number(const unsigned char *b, Py_ssize_t n, Py_ssize_t *p) {
    Py_ssize_t i = *p;
    if (i < n && b[i] == '-') i++;
    if (i >= n) return 1;
    if (b[i] == '0') {
        i++;
    } else if (b[i] >= '1' && b[i] <= '9') {
        while (i < n && is_digit(b[i])) i++;
    } else {
        *p = i;
        return 2;
    }
    if (i < n && b[i] == '.') {
        i++;
        if (i >= n) return 1;
        if (!is_digit(b[i])) { *p = i; return 2; }
        while (i < n && is_digit(b[i])) i++;
    }
    if (i < n && (b[i] == 'e' || b[i] == 'E')) {
        i++;
        if (i < n && (b[i] == '+' || b[i] == '-')) i++;
        if (i >= n) return 1;
        if (!is_digit(b[i])) { *p = i; return 2; }
        while (i < n && is_digit(b[i])) i++;
    }
    if (i >= n) return 1; /* a number never ends a container value */
    *p = i;
    return 0;
}

static int scan_literal(const unsigned char *b, Py_ssize_t n, Py_ssize_t *p) {
    const char *lit;
    Py_ssize_t len, k;
    switch (b[*p]) {
    case 't': lit = "true"; len = 4; break;
    case 'f': lit = "false"; len = 5; break;
    default: lit = "null"; len = 4; break;
    }
    for (k = 0; k < len; k++) {
        if (*p + k >= n) return 1;
        if (b[*p + k] != (unsigned char)lit[k]) { *p = *p + k; return 2; }
    }
    *p += len;
    return 0;
}

/* copy b[start:end] dropping whitespace outside strings; input is valid JSON */
static PyObject *compact(const unsigned char *b, Py_ssize_t start, Py_ssize_t end) {
    PyObject *out = PyBytes_FromStringAndSize(NULL, end - start);
    if (out == NULL) return NULL;
    char *o = PyBytes_AS_STRING(out);
    Py_ssize_t k = 0, i;
    int in_str = 0;
    for (i = start; i < end; i++) {
        unsigned char c = b[i];
        if (in_str) {
            o[k++] = (char)c;
            if (c == '\\') o[k++] = (char)b[++i];
            else if (c == '"') in_str = 0;
        } else if (!is_ws(c)) {
            o[k++] = (char)c;
            if (c == '"') in_str = 1;
        }
    }
    if (_PyBytes_Resize(&out, k) < 0) return NULL;
    return out;
}

static PyObject *result(int status, Py_ssize_t end, const unsigned char *b, Py_ssize_t start, int has_ws) {
    if (status == 0 && has_ws) {
        PyObject *text = compact(b, start, end);
        if (text == NULL) return NULL;
        return Py_BuildValue("(inN)", status, end, text);
    }
    return Py_BuildValue("(inO)", status, end, Py_None);
}

static PyObject *skip_value(PyObject *self, PyObject *args) {
    Py_buffer view;
    Py_ssize_t pos;
    char stack[MAX_DEPTH];
    int depth = 0, state = S_VALUE, has_ws = 0, rc;
    PyObject *out;

    if (!PyArg_ParseTuple(args, "y*n", &view, &pos)) return NULL;
    const unsigned char *b = (const unsigned char *)view.buf;
    Py_ssize_t n = view.len, i = pos;

    for (;;) {
        while (i < n && is_ws(b[i])) { has_ws = 1; i++; }
        if (i >= n) { out = result(1, i, b, pos, 0); break; }
        unsigned char c = b[i];
        if (c == ',') {
            if (state != S_COMMA_OR_END) { out = result(2, i, b, pos, 0); break; }
            state = stack[depth - 1] == '{' ? S_KEY : S_VALUE;
            i++;
            continue;
        }
        if (c == ':') {
            if (state != S_COLON) { out = result(2, i, b, pos, 0); break; }
            state = S_VALUE;
            i++;
            continue;
        }
        if (c == '}' || c == ']') {
            char want = c == '}' ? '{' : '[';
            int ok = c == '}' ? S_KEY_OR_END : S_VALUE_OR_END;
            if (depth == 0 || stack[depth - 1] != want || (state != ok && state != S_COMMA_OR_END)) {
                out = result(2, i, b, pos, 0);
                break;
            }
            depth--;
            i++;
            if (depth == 0) { out = result(0, i, b, pos, has_ws); break; }
            state = S_COMMA_OR_END;
            continue;
        }
        if (state == S_KEY_OR_END || state == S_KEY) {
            if (c != '"') { out = result(2, i, b, pos, 0); break; }
            rc = scan_string(b, n, &i);
            if (rc) { out = result(rc, i, b, pos, 0); break; }
            state = S_COLON;
            continue;
        }
        if (state != S_VALUE && state != S_VALUE_OR_END) { out = result(2, i, b, pos, 0); break; }
        if (c == '{' || c == '[') {
            if (depth >= MAX_DEPTH) { out = result(1, i, b, pos, 0); break; }
            stack[depth++] = (char)c;
            state = c == '{' ? S_KEY_OR_END : S_VALUE_OR_END;
            i++;
            continue;
        }
        if (depth == 0) { out = result(2, i, b, pos, 0); break; } /* only containers are skipped */
        if (c == '"') rc = scan_string(b, n, &i);
        else if (c == '-' || is_digit(c)) rc = scan_number(b, n, &i);
        else if (c == 't' || c == 'f' || c == 'n') rc = scan_literal(b, n, &i);
        else rc = 2;
        if (rc) { out = result(rc, i, b, pos, 0); break; }
        state = S_COMMA_OR_END;
    }
    PyBuffer_Release(&view);
    return out;
}

static PyMethodDef methods[] = {
    {"skip_value", skip_value, METH_VARARGS, "Validate one JSON container starting at pos."},
    {NULL, NULL, 0, NULL},
};

static struct PyModuleDef module = {PyModuleDef_HEAD_INIT, "_skip", NULL, -1, methods};

PyMODINIT_FUNC PyInit__skip(void) { return PyModule_Create(&module); }
