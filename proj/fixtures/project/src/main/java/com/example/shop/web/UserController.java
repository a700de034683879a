package com.example.shop.web;

import java.sql.Connection;
import java.sql.ResultSet;
import java.sql.Statement;
import javax.servlet.http.HttpServletRequest;
import org.slf4j.Logger;
import org.slf4j.LoggerFactory;

public class UserController {
    private static final Logger LOG = LoggerFactory.getLogger(UserController.class);
    private final Connection connection;

    public UserController(Connection connection) {
        this.connection = connection;
    }

    public ResultSet findUser(HttpServletRequest request) throws Exception {
        String name = request.getParameter("name");
        Statement stmt = connection.createStatement();
        String query = "SELECT * FROM users WHERE name = '" + name + "'";
        LOG.info("looking up user");
        return stmt.executeQuery(query);
    }

    public ResultSet countUsers() throws Exception {
        Statement stmt = connection.createStatement();
        return stmt.executeQuery("SELECT COUNT(*) FROM users");
    }
}
