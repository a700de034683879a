package com.example.shop.admin;

import javax.servlet.http.HttpServletRequest;

public class DiagnosticsController {
    public Process ping(HttpServletRequest request) throws Exception {
        String host = request.getParameter("host");
        Runtime runtime = Runtime.getRuntime();
        return runtime.exec("ping -c 1 " + host);
    }

    public Process uptime() throws Exception {
        Runtime runtime = Runtime.getRuntime();
        return runtime.exec("uptime");
    }
}
