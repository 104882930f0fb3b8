"""格式化工具。"""
